"""Java class model, project skeletons and focal-method input encoding.

A project snapshot is turned into three views:

* ``names_only``: for every source file, the names of the methods it declares;
* ``bodies``: the same files with each method's source text and line span;
* ``class_contexts``: per class, the name, constructor signatures, public
  method signatures and public fields.

A focal method plus its class context is then packed into a single-line
input (``<LINE>`` target, ``<FM>`` method, ``<FC>`` class, ``<C>``
constructors, ``<M>`` methods, ``<F>`` fields).
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from tree_sitter import Node

from . import _java
from .flat import C, F, FC, FM, LINE, M, _DECODE_RE, decode_flat, encode_flat

log = logging.getLogger(__name__)

DEFAULT_SOURCE_GLOB = "src/main/java/**/*.java"

_CLASS_TYPES = frozenset({
    "class_declaration",
    "interface_declaration",
    "enum_declaration",
    "record_declaration",
    "annotation_type_declaration",
})
_INTERFACE_TYPES = frozenset({"interface_declaration", "annotation_type_declaration"})
_WS = re.compile(r"\s+")


class JavaSyntaxError(SyntaxError):
    """A Java source file that does not parse cleanly."""

    def __init__(self, path: str, line: int, column: int = 0):
        super().__init__(f"{path}:{line}:{column}: syntax error")
        self.path = path
        self.line = line
        self.column = column


class UnsupportedSource(ValueError):
    def __init__(self, path: str):
        super().__init__(f"not a Java source file: {path}")
        self.path = path


class MismatchedOwner(ValueError):
    pass


@dataclass(frozen=True)
class SourceFile:
    path: str
    text: str

    @property
    def line_count(self) -> int:
        return max(1, len(self.text.split("\n")) - self.text.endswith("\n"))

    def line(self, number: int) -> str:
        """1-based line lookup."""
        return self.text.split("\n")[number - 1]


@dataclass(frozen=True)
class MethodInfo:
    name: str
    signature: str
    body: str
    start_line: int
    end_line: int
    owner_class: str
    path: str = ""
    is_constructor: bool = False
    is_public: bool = False
    is_private: bool = False


@dataclass(frozen=True)
class ClassContext:
    class_name: str
    constructor_signatures: tuple[str, ...] = ()
    public_method_signatures: tuple[str, ...] = ()
    public_fields: tuple[str, ...] = ()
    path: str = ""

    @property
    def simple_name(self) -> str:
        return self.class_name.rsplit(".", 1)[-1]


@dataclass(frozen=True)
class ProjectSkeleton:
    names_only: dict[str, list[str]]
    bodies: dict[str, list[MethodInfo]]
    class_contexts: dict[str, ClassContext]
    diagnostics: tuple[str, ...] = ()

    def method_at(self, path: str, line: int) -> MethodInfo | None:
        """Innermost method whose span contains ``line`` in ``path``."""
        best = None
        for m in self.bodies.get(path, ()):
            if m.start_line <= line <= m.end_line:
                if best is None or (m.end_line - m.start_line) < (best.end_line - best.start_line):
                    best = m
        return best


@dataclass(frozen=True)
class FocalUnit:
    method: MethodInfo
    context: ClassContext
    encoded_input: str
    target_line: str | None = None


@dataclass(frozen=True)
class DecodedFocal:
    target_line: str | None
    focal_method: str
    focal_class: str
    constructors: tuple[str, ...]
    methods: tuple[str, ...]
    fields: tuple[str, ...]


@dataclass(frozen=True)
class ParseCheck:
    """Outcome of :func:`is_parsable`; truthy when the text parses."""

    ok: bool
    line: int | None = None
    column: int | None = None
    at_end: bool = False

    def __bool__(self) -> bool:
        return self.ok


def normalize_signature(text: str) -> str:
    """Strip comments and collapse whitespace runs to one space."""
    return _WS.sub(" ", _java.strip_comments(text)).strip()


def _has_modifier(node: Node, src: bytes, word: str) -> bool:
    for child in node.children:
        if child.type == "modifiers":
            return any(_java.node_text(m, src) == word for m in child.children)
    return False


def _header_text(node: Node, src: bytes) -> str:
    body = node.child_by_field_name("body")
    end = body.start_byte if body is not None else node.end_byte
    text = src[node.start_byte:end].decode("utf-8", errors="replace")
    return normalize_signature(text).rstrip(";").rstrip()


def _class_body_members(body: Node) -> list[Node]:
    members = []
    for child in body.named_children:
        if child.type == "enum_body_declarations":
            members.extend(child.named_children)
        else:
            members.append(child)
    return members


def _package_name(root: Node, src: bytes) -> str:
    for child in root.named_children:
        if child.type == "package_declaration":
            for n in child.named_children:
                if n.type in ("scoped_identifier", "identifier"):
                    return _java.node_text(n, src)
    return ""


def _collect_class(node: Node, src: bytes, prefix: str, path: str, out: list) -> None:
    name_node = node.child_by_field_name("name")
    simple = _java.node_text(name_node, src) if name_node is not None else "<anonymous>"
    qname = f"{prefix}.{simple}" if prefix else simple
    interface = node.type in _INTERFACE_TYPES
    body = node.child_by_field_name("body")

    ctors: list[str] = []
    public_methods: list[str] = []
    fields: list[str] = []
    methods: list[MethodInfo] = []
    nested: list[Node] = []

    if node.type == "record_declaration":
        # the record header doubles as the canonical constructor
        params = node.child_by_field_name("parameters")
        if params is not None:
            ctors.append(normalize_signature(simple + _java.node_text(params, src)))

    for member in _class_body_members(body) if body is not None else ():
        kind = member.type
        if kind in _CLASS_TYPES:
            nested.append(member)
        elif kind in ("method_declaration", "constructor_declaration", "compact_constructor_declaration"):
            is_ctor = kind != "method_declaration"
            private = _has_modifier(member, src, "private")
            public = _has_modifier(member, src, "public") or (interface and not private)
            n = member.child_by_field_name("name")
            mname = _java.node_text(n, src) if n is not None else simple
            sig = _header_text(member, src)
            methods.append(MethodInfo(
                name=mname,
                signature=sig,
                body=_java.node_text(member, src),
                start_line=member.start_point[0] + 1,
                end_line=member.end_point[0] + 1,
                owner_class=qname,
                path=path,
                is_constructor=is_ctor,
                is_public=public,
                is_private=private,
            ))
            if is_ctor:
                ctors.append(sig)
            elif public:
                public_methods.append(sig)
        elif kind in ("field_declaration", "constant_declaration"):
            if _has_modifier(member, src, "public") or interface:
                fields.append(normalize_signature(_java.node_text(member, src)))

    ctx = ClassContext(qname, tuple(ctors), tuple(public_methods), tuple(fields), path)
    out.append((ctx, methods))
    for child in nested:
        _collect_class(child, src, qname, path, out)


def parse_class_model(file: SourceFile) -> list[tuple[ClassContext, list[MethodInfo]]]:
    """Parse one Java file into ``(ClassContext, methods)`` pairs.

    One entry per top-level or nested class, outer classes first. Local and
    anonymous classes are not modelled. Raises :class:`JavaSyntaxError` rather
    than returning a partial model.
    """
    if not file.path.endswith(".java"):
        raise UnsupportedSource(file.path)
    if not file.text.strip():
        return []
    src = file.text.encode("utf-8")
    tree = _java.parser().parse(src)
    root = tree.root_node
    err = _java.first_error(root)
    if err is not None:
        raise JavaSyntaxError(file.path, err.start_point[0] + 1, err.start_point[1])
    package = _package_name(root, src)
    out: list[tuple[ClassContext, list[MethodInfo]]] = []
    for child in root.named_children:
        if child.type in _CLASS_TYPES:
            _collect_class(child, src, package, file.path, out)
    return out


def build_project_skeletons(
    files: Sequence[SourceFile],
    include_private: bool = True,
    workers: int | None = None,
) -> ProjectSkeleton:
    """Build the three context views over a project snapshot.

    Files that fail to parse are skipped and reported in ``diagnostics``.
    The merge is ordered by path, so the result does not depend on the order
    in which files are parsed. ``include_private=False`` drops private methods
    from ``names_only`` only.
    """
    paths = [f.path for f in files]
    if len(set(paths)) != len(paths):
        raise ValueError("duplicate source paths in project snapshot")

    def _one(f: SourceFile):
        try:
            return f, parse_class_model(f), None
        except (JavaSyntaxError, UnsupportedSource) as exc:
            return f, None, str(exc)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one, files))
    else:
        results = [_one(f) for f in files]

    names_only: dict[str, list[str]] = {}
    bodies: dict[str, list[MethodInfo]] = {}
    contexts: dict[str, ClassContext] = {}
    diagnostics: list[str] = []
    for f, model, error in sorted(results, key=lambda r: r[0].path):
        if model is None:
            diagnostics.append(f"skipped {error}")
            continue
        methods = sorted(
            (m for _, ms in model for m in ms),
            key=lambda m: (m.start_line, m.end_line),
        )
        bodies[f.path] = methods
        names_only[f.path] = [m.name for m in methods if include_private or not m.is_private]
        for ctx, _ in model:
            if ctx.class_name in contexts:
                diagnostics.append(f"{f.path}: duplicate class {ctx.class_name}, keeping {contexts[ctx.class_name].path}")
                continue
            contexts[ctx.class_name] = ctx
    return ProjectSkeleton(names_only, bodies, contexts, tuple(diagnostics))


def load_project_files(root: str | Path, pattern: str = DEFAULT_SOURCE_GLOB) -> list[SourceFile]:
    """Read every file under ``root`` matching ``pattern``, sorted by path."""
    root = Path(root)
    files = []
    for p in sorted(root.glob(pattern)):
        if p.is_file():
            rel = p.relative_to(root).as_posix()
            files.append(SourceFile(rel, p.read_text(encoding="utf-8", errors="replace")))
    return files


def build_focal_input(method: MethodInfo, ctx: ClassContext, target_line: str | None = None) -> FocalUnit:
    """Pack a focal method and its class context into one line.

    Field order is ``<LINE>`` (only when a target line is given), ``<FM>``,
    ``<FC>``, then one ``<C>``/``<M>``/``<F>`` marker per list entry. Values
    are flattened with :func:`encode_flat`; comments are stripped from the
    method body first.
    """
    if method.owner_class != ctx.class_name:
        raise MismatchedOwner(f"{method.name} belongs to {method.owner_class}, not {ctx.class_name}")
    parts = []
    if target_line:
        parts.append((LINE, target_line))
    parts.append((FM, _java.strip_comments(method.body)))
    parts.append((FC, ctx.class_name))
    parts.extend((C, s) for s in ctx.constructor_signatures)
    parts.extend((M, s) for s in ctx.public_method_signatures)
    parts.extend((F, s) for s in ctx.public_fields)
    encoded = " ".join(f"{marker} {encode_flat(value)}" for marker, value in parts)
    return FocalUnit(method, ctx, encoded, target_line or None)


_FIELD_MARKERS = (LINE, FM, FC, C, M, F)


def decode_focal_input(encoded: str) -> DecodedFocal:
    """Recover the fields packed by :func:`build_focal_input`."""
    fields: list[tuple[str, str]] = []
    marker, start = None, 0
    for m in _DECODE_RE.finditer(encoded):
        token = m.group(2)
        if token not in _FIELD_MARKERS or len(m.group(1)) % 2:
            continue
        if marker is not None:
            fields.append((marker, encoded[start:m.start()]))
        marker, start = token, m.end()
    if marker is None:
        raise ValueError("no field markers in encoded input")
    fields.append((marker, encoded[start:]))

    def value(raw: str, last: bool) -> str:
        # one separating space after the marker, and one before the next marker
        if raw.startswith(" "):
            raw = raw[1:]
        if not last and raw.endswith(" "):
            raw = raw[:-1]
        return decode_flat(raw)

    got: dict[str, list[str]] = {k: [] for k in _FIELD_MARKERS}
    for i, (marker, raw) in enumerate(fields):
        got[marker].append(value(raw, i == len(fields) - 1))
    if len(got[FM]) != 1 or len(got[FC]) != 1:
        raise ValueError("encoded input must carry exactly one <FM> and one <FC>")
    return DecodedFocal(
        target_line=got[LINE][0] if got[LINE] else None,
        focal_method=got[FM][0],
        focal_class=got[FC][0],
        constructors=tuple(got[C]),
        methods=tuple(got[M]),
        fields=tuple(got[F]),
    )


def is_parsable(test_text: str) -> ParseCheck:
    """Check that ``test_text`` parses as a member of a minimal class.

    The reported position is relative to ``test_text`` (1-based line,
    0-based column). Errors that only surface at the synthetic closing brace
    are reported at the end of the input with ``at_end`` set.
    """
    src = _java.CLASS_SHELL_OPEN + test_text + _java.CLASS_SHELL_CLOSE
    tree = _java.parse(src)
    lines = test_text.split("\n")
    end_pos = (len(lines), len(lines[-1]))
    err = _java.first_error(tree.root_node)
    if err is not None:
        row, col = err.start_point
        # row 0 is the shell header; past the last text line is the shell footer
        if row == 0:
            return ParseCheck(False, 1, 0)
        if row > len(lines) or (row == len(lines) and col >= len(lines[-1].encode("utf-8"))):
            return ParseCheck(False, end_pos[0], end_pos[1], at_end=True)
        return ParseCheck(False, row, col)
    members = _java._shell_nodes(tree, statements=False)
    if members is None:
        # text closed the shell early and declared something else after it
        return ParseCheck(False, end_pos[0], end_pos[1], at_end=True)
    if not members:
        return ParseCheck(False, 1, 0, at_end=True)
    return ParseCheck(True)


def skeleton_to_records(skel: ProjectSkeleton) -> dict[str, list[dict]]:
    """JSON-ready records for the three outputs, in deterministic order."""
    names = [{"path": p, "methods": skel.names_only[p]} for p in sorted(skel.names_only)]
    bodies = [
        {
            "path": p,
            "name": m.name,
            "owner_class": m.owner_class,
            "signature": m.signature,
            "start_line": m.start_line,
            "end_line": m.end_line,
            "is_constructor": m.is_constructor,
            "is_public": m.is_public,
            "is_private": m.is_private,
            "body": m.body,
        }
        for p in sorted(skel.bodies)
        for m in skel.bodies[p]
    ]
    contexts = [
        {
            "class_name": c.class_name,
            "path": c.path,
            "constructors": list(c.constructor_signatures),
            "public_methods": list(c.public_method_signatures),
            "public_fields": list(c.public_fields),
        }
        for _, c in sorted(skel.class_contexts.items())
    ]
    return {"names_only": names, "bodies": bodies, "class_contexts": contexts}


def _dump_jsonl(path: Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")


def _load_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_skeleton(skel: ProjectSkeleton, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, records in skeleton_to_records(skel).items():
        path = out_dir / f"{name}.jsonl"
        _dump_jsonl(path, records)
        written.append(path)
    diag = out_dir / "diagnostics.log"
    diag.write_text("".join(d + "\n" for d in skel.diagnostics), encoding="utf-8")
    written.append(diag)
    return written


def read_skeleton(out_dir: str | Path) -> ProjectSkeleton:
    out_dir = Path(out_dir)
    names = {r["path"]: r["methods"] for r in _load_jsonl(out_dir / "names_only.jsonl")}
    bodies: dict[str, list[MethodInfo]] = {p: [] for p in names}
    for r in _load_jsonl(out_dir / "bodies.jsonl"):
        bodies.setdefault(r["path"], []).append(MethodInfo(
            name=r["name"], signature=r["signature"], body=r["body"],
            start_line=r["start_line"], end_line=r["end_line"],
            owner_class=r["owner_class"], path=r["path"],
            is_constructor=r["is_constructor"], is_public=r["is_public"],
            is_private=r["is_private"],
        ))
    contexts = {
        r["class_name"]: ClassContext(
            r["class_name"], tuple(r["constructors"]), tuple(r["public_methods"]),
            tuple(r["public_fields"]), r["path"],
        )
        for r in _load_jsonl(out_dir / "class_contexts.jsonl")
    }
    diag_path = out_dir / "diagnostics.log"
    diags = tuple(diag_path.read_text(encoding="utf-8").splitlines()) if diag_path.exists() else ()
    return ProjectSkeleton(names, bodies, contexts, diags)
