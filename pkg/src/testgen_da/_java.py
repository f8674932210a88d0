"""Thin wrapper over the tree-sitter Java grammar.

Everything that needs a syntax tree goes through here so that the grammar is
loaded once per process and the class/method "shell" conventions stay in one
place.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Iterator

import tree_sitter_java
from tree_sitter import Language, Node, Parser, Tree

JAVA = Language(tree_sitter_java.language())

_local = threading.local()

CLASS_SHELL_OPEN = "class _Shell {\n"
CLASS_SHELL_CLOSE = "\n}"
METHOD_SHELL_OPEN = "class _Shell {\nvoid _body() {\n"
METHOD_SHELL_CLOSE = "\n}\n}"


def parser() -> Parser:
    # Parser objects are not thread-safe; keep one per thread.
    p = getattr(_local, "parser", None)
    if p is None:
        p = Parser(JAVA)
        _local.parser = p
    return p


def parse(text: str) -> Tree:
    return parser().parse(text.encode("utf-8"))


def node_text(node: Node, source: bytes) -> str:
    return source[node.start_byte:node.end_byte].decode("utf-8", errors="replace")


def walk(node: Node) -> Iterator[Node]:
    """Pre-order traversal without recursion."""
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(n.children))


def first_error(node: Node) -> Node | None:
    """First ERROR or MISSING node in document order, if any."""
    if not node.has_error:
        return None
    for n in walk(node):
        if n.is_error or n.is_missing:
            return n
    return None


@dataclass(frozen=True)
class Fragment:
    """A snippet parsed inside a synthetic shell.

    ``nodes`` are the top-level nodes that belong to the snippet (class body
    members, or block statements), never the shell itself.
    """

    tree: Tree
    source: bytes
    nodes: tuple[Node, ...]
    kind: str  # "member" or "statements"


def _shell_nodes(tree: Tree, statements: bool) -> tuple[Node, ...] | None:
    root = tree.root_node
    classes = [c for c in root.named_children if c.type != "line_comment" and c.type != "block_comment"]
    if len(classes) != 1 or classes[0].type != "class_declaration":
        return None
    body = classes[0].child_by_field_name("body")
    if body is None:
        return None
    members = [c for c in body.named_children if not c.type.endswith("comment")]
    if not statements:
        return tuple(members)
    if len(members) != 1 or members[0].type != "method_declaration":
        return None
    block = members[0].child_by_field_name("body")
    if block is None:
        return None
    return tuple(c for c in block.named_children if not c.type.endswith("comment"))


def parse_member(text: str) -> Fragment | None:
    """Parse ``text`` as class members; None unless error-free and non-empty."""
    src = CLASS_SHELL_OPEN + text + CLASS_SHELL_CLOSE
    tree = parse(src)
    if tree.root_node.has_error:
        return None
    nodes = _shell_nodes(tree, statements=False)
    if not nodes:
        return None
    return Fragment(tree, src.encode("utf-8"), nodes, "member")


def parse_fragment(text: str) -> Fragment | None:
    """Parse a snippet as class members, falling back to block statements."""
    frag = parse_member(text)
    if frag is not None:
        return frag
    src = METHOD_SHELL_OPEN + text + METHOD_SHELL_CLOSE
    tree = parse(src)
    if tree.root_node.has_error:
        return None
    nodes = _shell_nodes(tree, statements=True)
    if not nodes:
        return None
    return Fragment(tree, src.encode("utf-8"), nodes, "statements")


COMMENT_TYPES = frozenset({"line_comment", "block_comment", "comment"})


def strip_comments(text: str) -> str:
    """Remove Java comments, dropping lines left blank by the removal.

    Lexical scan, so truncated or otherwise unparsable text is handled too.
    String and char literals are skipped.
    """
    spans = _comment_spans_lexical(text)
    if not spans:
        return text
    pieces = []
    touched = set()
    pos = 0
    line = 0
    for start, end in spans:
        chunk = text[pos:start]
        pieces.append(chunk)
        line += chunk.count("\n")
        touched.add(line)
        pos = end
    pieces.append(text[pos:])
    lines = "".join(pieces).split("\n")
    kept = []
    for i, ln in enumerate(lines):
        if i in touched:
            ln = ln.rstrip()
            if not ln.strip():
                continue
        kept.append(ln)
    return "\n".join(kept)


def _comment_spans_lexical(text: str) -> list[tuple[int, int]]:
    spans = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c == '"' or c == "'":
            if text.startswith('"""', i):
                j = text.find('"""', i + 3)
                i = n if j < 0 else j + 3
                continue
            j = i + 1
            while j < n and text[j] != c and text[j] != "\n":
                j += 2 if text[j] == "\\" else 1
            i = j + 1
        elif text.startswith("//", i):
            j = text.find("\n", i)
            j = n if j < 0 else j
            spans.append((i, j))
            i = j
        elif text.startswith("/*", i):
            j = text.find("*/", i + 2)
            j = n if j < 0 else j + 2
            spans.append((i, j))
            i = j
        else:
            i += 1
    return spans
