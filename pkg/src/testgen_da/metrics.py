"""Textual similarity between generated and reference tests.

BLEU over code tokens, and CodeBLEU as a convex combination of four
components: BLEU, keyword-weighted n-gram match, syntax-subtree match and
def-use (dataflow) match. All sentence-level scores are pure functions.

Constants and choices that published descriptions leave open:

* add-one smoothing for n >= 2, only for an order whose match count is zero;
* n-gram orders with no candidate n-grams (candidate shorter than n) are
  left out of the geometric mean instead of scoring as zero or one;
* the weight of an n-gram is the mean weight of its tokens;
* syntax subtrees are the nodes with at least one child, serialized with
  identifiers anonymized and literals kept;
* a def-use edge is keyed by (variable, definition ordinal), variables
  renamed to their first-occurrence index.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence, Union

from . import _java

log = logging.getLogger(__name__)

JAVA_KEYWORDS = frozenset("""
abstract assert boolean break byte case catch char class const continue default do
double else enum extends final finally float for goto if implements import instanceof
int interface long native new package private protected public return short static
strictfp super switch synchronized this throw throws transient try void volatile while
""".split())


class Token(NamedTuple):
    text: str
    keyword: bool


TokenSeq = list[Token]

_TOKEN = re.compile(
    r"""
      "(?:[^"\\]|\\.)*"         # string literal, kept whole
    | '(?:[^'\\]|\\.)*'         # char literal
    | [A-Za-z_$][\w$]*          # identifier or keyword
    | \d[\w.]*                  # numeric literal
    | \S                        # any other single character
    """,
    re.VERBOSE | re.DOTALL,
)


def tokenize_code(text: str) -> TokenSeq:
    """Split code into tokens; punctuation is one token per character."""
    return [Token(t, t in JAVA_KEYWORDS) for t in _TOKEN.findall(text)]


Tokens = Union[str, Sequence[Token], Sequence[str]]


def _texts(seq: Tokens) -> list[str]:
    if isinstance(seq, str):
        return [t.text for t in tokenize_code(seq)]
    return [t.text if isinstance(t, Token) else t for t in seq]


@dataclass(frozen=True)
class BleuConfig:
    max_n: int = 4
    smoothing: str = "add-one"  # or "none"

    def __post_init__(self):
        if self.max_n < 1:
            raise ValueError("max_n must be >= 1")
        if self.smoothing not in ("none", "add-one"):
            raise ValueError(f"unknown smoothing {self.smoothing!r}")


@dataclass(frozen=True)
class CodeBleuConfig:
    weights: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    keyword_weight: float = 4.0
    keywords: frozenset[str] = JAVA_KEYWORDS
    bleu: BleuConfig = field(default_factory=BleuConfig)

    def __post_init__(self):
        if len(self.weights) != 4 or any(w < 0 for w in self.weights):
            raise ValueError("need four non-negative weights")
        if not math.isclose(sum(self.weights), 1.0, abs_tol=1e-9):
            raise ValueError(f"weights must sum to 1, got {sum(self.weights)}")
        if self.keyword_weight <= 0:
            raise ValueError("keyword_weight must be positive")


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class NgramStats:
    """Match and total mass per order, plus lengths for the brevity penalty."""

    matches: list[float]
    totals: list[float]
    cand_len: int
    ref_len: int

    def __add__(self, other: "NgramStats") -> "NgramStats":
        return NgramStats(
            [a + b for a, b in zip(self.matches, other.matches)],
            [a + b for a, b in zip(self.totals, other.totals)],
            self.cand_len + other.cand_len,
            self.ref_len + other.ref_len,
        )


def _bleu_stats(cand: list[str], ref: list[str], max_n: int, weight=None) -> NgramStats:
    matches, totals = [], []
    for n in range(1, max_n + 1):
        c, r = _ngrams(cand, n), _ngrams(ref, n)
        w = weight or (lambda g: 1.0)
        matches.append(sum(min(k, r[g]) * w(g) for g, k in c.items()))
        totals.append(sum(k * w(g) for g, k in c.items()))
    return NgramStats(matches, totals, len(cand), len(ref))


def _combine(stats: NgramStats, cfg: BleuConfig) -> float:
    """Geometric mean of precisions times brevity penalty, on [0, 1]."""
    if stats.cand_len == 0:
        return 0.0
    logs = []
    for n, (m, t) in enumerate(zip(stats.matches, stats.totals), start=1):
        if t == 0:
            continue
        if m == 0:
            if n == 1 or cfg.smoothing == "none":
                return 0.0
            m, t = 1.0, t + 1.0
        logs.append(math.log(m / t))
    bp = 1.0 if stats.cand_len > stats.ref_len else math.exp(1 - stats.ref_len / stats.cand_len)
    return bp * math.exp(sum(logs) / len(logs))


def bleu(candidate: Tokens, reference: Tokens, cfg: BleuConfig = BleuConfig()) -> float:
    """Sentence BLEU on [0, 100]; an empty candidate scores 0."""
    stats = _bleu_stats(_texts(candidate), _texts(reference), cfg.max_n)
    return 100.0 * _combine(stats, cfg)


def _weight_fn(cfg: CodeBleuConfig):
    def weight(gram: tuple[str, ...]) -> float:
        return sum(cfg.keyword_weight if t in cfg.keywords else 1.0 for t in gram) / len(gram)
    return weight


def weighted_ngram_precision(candidate: Tokens, reference: Tokens, n: int,
                             cfg: CodeBleuConfig = CodeBleuConfig()) -> float:
    """Clipped precision at order ``n`` with keyword-weighted n-grams."""
    stats = _bleu_stats(_texts(candidate), _texts(reference), n, _weight_fn(cfg))
    m, t = stats.matches[n - 1], stats.totals[n - 1]
    return m / t if t else 0.0


def weighted_ngram_match(candidate: Tokens, reference: Tokens,
                         cfg: CodeBleuConfig = CodeBleuConfig()) -> float:
    """Keyword-weighted BLEU on [0, 1]."""
    stats = _bleu_stats(_texts(candidate), _texts(reference), cfg.bleu.max_n, _weight_fn(cfg))
    return _combine(stats, cfg.bleu)


# --- syntax subtrees ---------------------------------------------------------

_ANON_LEAVES = frozenset({"identifier", "type_identifier"})


def _subtrees(text: str) -> list[str] | None:
    frag = _java.parse_fragment(text)
    if frag is None:
        return None
    out: list[str] = []

    def sexp(node) -> str:
        kids = [c for c in node.children if not c.type.endswith("comment")]
        if not kids:
            if node.type in _ANON_LEAVES:
                return node.type
            if node.is_named:
                return f"{node.type}:{_java.node_text(node, frag.source)}"
            return repr(node.type)
        s = f"({node.type} {' '.join(sexp(c) for c in kids)})"
        out.append(s)
        return s

    for node in frag.nodes:
        sexp(node)
    return out


class SubtreeStats(NamedTuple):
    matched: int
    total: int
    ref_total: int


def _ast_stats(candidate_text: str, reference_text: str) -> SubtreeStats | None:
    cand = _subtrees(candidate_text)
    if cand is None:
        log.info("ast_match: candidate does not parse")
        return None
    ref = _subtrees(reference_text)
    if ref is None:
        log.info("ast_match: reference does not parse")
        return None
    pool = Counter(ref)
    matched = 0
    for s in cand:
        if pool[s] > 0:
            pool[s] -= 1
            matched += 1
    return SubtreeStats(matched, len(cand), len(ref))


def _ratio(stats) -> float:
    matched, total, ref_total = stats
    if total == 0:
        return 1.0 if ref_total == 0 else 0.0
    return matched / total


def ast_match(candidate_text: str, reference_text: str) -> float:
    """Share of candidate subtrees found in the reference, on [0, 1]."""
    stats = _ast_stats(candidate_text, reference_text)
    return 0.0 if stats is None else _ratio(stats)


# --- dataflow ----------------------------------------------------------------

def _same(a, b) -> bool:
    return a is not None and b is not None and a.start_byte == b.start_byte and a.end_byte == b.end_byte


def _def_use_edges(text: str) -> list[tuple[int, int]] | None:
    frag = _java.parse_fragment(text)
    if frag is None:
        return None
    src = frag.source

    def name_of(node) -> str:
        return _java.node_text(node, src)

    # variables: anything declared or assigned inside the snippet
    variables: set[str] = set()
    for root in frag.nodes:
        for n in _java.walk(root):
            if n.type in ("variable_declarator", "formal_parameter", "catch_formal_parameter",
                          "enhanced_for_statement", "spread_parameter"):
                nm = n.child_by_field_name("name")
                if nm is not None and nm.type == "identifier":
                    variables.add(name_of(nm))
            elif n.type == "assignment_expression":
                left = n.child_by_field_name("left")
                if left is not None and left.type == "identifier":
                    variables.add(name_of(left))
            elif n.type == "lambda_expression":
                params = n.child_by_field_name("parameters")
                if params is not None:
                    for p in ([params] if params.type == "identifier" else params.named_children):
                        if p.type == "identifier":
                            variables.add(name_of(p))

    index: dict[str, int] = {}
    current: dict[str, int] = {}  # var -> ordinal of its live definition
    count: Counter = Counter()
    edges: list[tuple[int, int]] = []

    def norm(name: str) -> int:
        return index.setdefault(name, len(index))

    def define(node) -> None:
        v = name_of(node)
        if v in variables:
            norm(v)
            current[v] = count[v]
            count[v] += 1

    def use(node) -> None:
        v = name_of(node)
        if v in current:
            edges.append((norm(v), current[v]))

    def is_reference(node) -> bool:
        parent = node.parent
        if parent is None:
            return True
        if parent.type in ("method_invocation",) and _same(parent.child_by_field_name("name"), node):
            return False
        if parent.type == "field_access" and _same(parent.child_by_field_name("field"), node):
            return False
        if parent.type in ("method_declaration", "class_declaration", "labeled_statement"):
            return False
        return True

    def visit(node) -> None:
        t = node.type
        if t == "identifier":
            if is_reference(node):
                use(node)
            return
        if t == "variable_declarator":
            value = node.child_by_field_name("value")
            if value is not None:
                visit(value)
            nm = node.child_by_field_name("name")
            if nm is not None:
                define(nm)
            return
        if t == "assignment_expression":
            left, right = node.child_by_field_name("left"), node.child_by_field_name("right")
            op = node.child_by_field_name("operator")
            if right is not None:
                visit(right)
            if left is not None and left.type == "identifier":
                if op is not None and name_of(op) != "=":
                    use(left)
                define(left)
            elif left is not None:
                visit(left)
            return
        if t == "update_expression":
            operand = next((c for c in node.named_children), None)
            if operand is not None and operand.type == "identifier":
                use(operand)
                define(operand)
                return
        if t in ("formal_parameter", "catch_formal_parameter", "spread_parameter"):
            nm = node.child_by_field_name("name")
            if nm is not None:
                define(nm)
            return
        if t == "enhanced_for_statement":
            value = node.child_by_field_name("value")
            if value is not None:
                visit(value)
            nm = node.child_by_field_name("name")
            if nm is not None:
                define(nm)
            body = node.child_by_field_name("body")
            if body is not None:
                visit(body)
            return
        if t == "lambda_expression":
            params = node.child_by_field_name("parameters")
            if params is not None:
                for p in ([params] if params.type == "identifier" else params.named_children):
                    if p.type == "identifier":
                        define(p)
                    else:
                        visit(p)
            body = node.child_by_field_name("body")
            if body is not None:
                visit(body)
            return
        for child in node.named_children:
            visit(child)

    for root in frag.nodes:
        visit(root)
    return edges


def _dataflow_stats(candidate_text: str, reference_text: str) -> SubtreeStats | None:
    cand = _def_use_edges(candidate_text)
    if cand is None:
        log.info("dataflow_match: candidate does not parse")
        return None
    ref = _def_use_edges(reference_text)
    if ref is None:
        log.info("dataflow_match: reference does not parse")
        return None
    pool = Counter(ref)
    matched = 0
    for e in cand:
        if pool[e] > 0:
            pool[e] -= 1
            matched += 1
    return SubtreeStats(matched, len(cand), len(ref))


def dataflow_match(candidate_text: str, reference_text: str) -> float:
    """Share of candidate def-use edges found in the reference, on [0, 1]."""
    stats = _dataflow_stats(candidate_text, reference_text)
    return 0.0 if stats is None else _ratio(stats)


# --- CodeBLEU ----------------------------------------------------------------

class Components(NamedTuple):
    bleu: float  # on [0, 1]
    weighted_ngram: float
    ast: float
    dataflow: float


def combine(components: Components, weights: Sequence[float] = (0.25, 0.25, 0.25, 0.25)) -> float:
    """Convex combination of the four components, on [0, 100]."""
    return 100.0 * sum(w * c for w, c in zip(weights, components))


def codebleu_components(candidate_text: str, reference_text: str,
                        cfg: CodeBleuConfig = CodeBleuConfig()) -> Components:
    cand, ref = _texts(candidate_text), _texts(reference_text)
    return Components(
        _combine(_bleu_stats(cand, ref, cfg.bleu.max_n), cfg.bleu),
        _combine(_bleu_stats(cand, ref, cfg.bleu.max_n, _weight_fn(cfg)), cfg.bleu),
        ast_match(candidate_text, reference_text),
        dataflow_match(candidate_text, reference_text),
    )


def codebleu(candidate_text: str, reference_text: str, cfg: CodeBleuConfig = CodeBleuConfig()) -> float:
    """CodeBLEU on [0, 100]."""
    return combine(codebleu_components(candidate_text, reference_text, cfg), cfg.weights)


@dataclass(frozen=True)
class PairScore:
    bleu: float
    codebleu: float
    components: Components


@dataclass(frozen=True)
class CorpusScore:
    bleu: float
    codebleu: float
    pairs: list[PairScore]
    mode: str


def corpus_scores(
    pairs: Iterable[tuple[str, str]],
    cfg: CodeBleuConfig = CodeBleuConfig(),
    mode: str = "sentence",
) -> CorpusScore:
    """Score (candidate, reference) pairs and aggregate them.

    ``mode="sentence"`` averages per-pair scores. ``mode="pooled"`` pools
    n-gram counts over the corpus (corpus BLEU); the syntax and dataflow
    components are still per-pair means, since an unparsable pair has no
    counts to pool.
    """
    if mode not in ("sentence", "pooled"):
        raise ValueError(f"unknown corpus mode {mode!r}")
    scored: list[PairScore] = []
    bleu_pool = wng_pool = None
    weight = _weight_fn(cfg)
    for cand_text, ref_text in pairs:
        comp = codebleu_components(cand_text, ref_text, cfg)
        scored.append(PairScore(100.0 * comp.bleu, combine(comp, cfg.weights), comp))
        if mode == "pooled":
            cand, ref = _texts(cand_text), _texts(ref_text)
            b = _bleu_stats(cand, ref, cfg.bleu.max_n)
            w = _bleu_stats(cand, ref, cfg.bleu.max_n, weight)
            bleu_pool = b if bleu_pool is None else bleu_pool + b
            wng_pool = w if wng_pool is None else wng_pool + w
    if not scored:
        return CorpusScore(0.0, 0.0, [], mode)
    if mode == "sentence":
        return CorpusScore(
            sum(p.bleu for p in scored) / len(scored),
            sum(p.codebleu for p in scored) / len(scored),
            scored, mode,
        )
    comp = Components(
        _combine(bleu_pool, cfg.bleu),
        _combine(wng_pool, cfg.bleu),
        sum(p.components.ast for p in scored) / len(scored),
        sum(p.components.dataflow for p in scored) / len(scored),
    )
    return CorpusScore(100.0 * comp.bleu, combine(comp, cfg.weights), scored, mode)
