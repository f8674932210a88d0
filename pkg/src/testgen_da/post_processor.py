"""From raw model output to tests that parse, compile and run.

Each candidate moves forward through a fixed set of states::

    Raw -> Restored -> Named -> Parsable | RepairedParsable | RejectedParse
        Parsable | RepairedParsable -> Compilable | RejectedCompile
        Compilable -> Passing | Failing

Compiling and running are delegated to external adapter commands. Candidates
are injected one at a time into their test class, with developer tests
replaced by an empty shell, and the project tree is always restored.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import re
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import _java
from .flat import decode_flat
from .source_model import JavaSyntaxError, is_parsable

log = logging.getLogger(__name__)

DEFAULT_MAX_EXTRA_BRACKETS = 8


class Status(str, enum.Enum):
    RAW = "Raw"
    RESTORED = "Restored"
    NAMED = "Named"
    PARSABLE = "Parsable"
    REPAIRED_PARSABLE = "RepairedParsable"
    REJECTED_PARSE = "RejectedParse"
    COMPILABLE = "Compilable"
    REJECTED_COMPILE = "RejectedCompile"
    PASSING = "Passing"
    FAILING = "Failing"


_NEXT: dict[Status, frozenset[Status]] = {
    Status.RAW: frozenset({Status.RESTORED}),
    Status.RESTORED: frozenset({Status.NAMED}),
    Status.NAMED: frozenset({Status.PARSABLE, Status.REPAIRED_PARSABLE, Status.REJECTED_PARSE}),
    Status.PARSABLE: frozenset({Status.COMPILABLE, Status.REJECTED_COMPILE}),
    Status.REPAIRED_PARSABLE: frozenset({Status.COMPILABLE, Status.REJECTED_COMPILE}),
    Status.COMPILABLE: frozenset({Status.PASSING, Status.FAILING}),
}

PARSED = frozenset({Status.PARSABLE, Status.REPAIRED_PARSABLE})
AT_LEAST_PARSABLE = PARSED | {Status.COMPILABLE, Status.REJECTED_COMPILE, Status.PASSING, Status.FAILING}
AT_LEAST_COMPILABLE = frozenset({Status.COMPILABLE, Status.PASSING, Status.FAILING})


class InvalidTransition(RuntimeError):
    pass


class AlreadyParsable(ValueError):
    """repair_truncation was handed text that already parses."""


class RepairRejected(ValueError):
    def __init__(self, text: str, steps: list[str]):
        super().__init__(f"still unparsable after {len(steps)} repair steps")
        self.text = text
        self.steps = steps


class NoClassBody(ValueError):
    pass


class CollisionAfterRename(RuntimeError):
    pass


class PrecheckFailed(RuntimeError):
    pass


class AdapterTimeout(RuntimeError):
    def __init__(self, candidate_id: str, timeout: float):
        super().__init__(f"adapter timed out after {timeout}s on {candidate_id}")
        self.candidate_id = candidate_id


@dataclass
class CandidateTest:
    id: str
    raw_text: str
    target_classpath: str = ""
    text: str = ""
    status: Status = Status.RAW
    repair_log: list[str] = field(default_factory=list)
    instance_id: str = ""

    def advance(self, new: Status) -> None:
        if new not in _NEXT.get(self.status, ()):
            raise InvalidTransition(f"{self.id}: {self.status.value} -> {new.value}")
        self.status = new


@dataclass(frozen=True)
class Repair:
    text: str
    steps: tuple[str, ...]


@dataclass(frozen=True)
class CompileAdapter:
    """A shell command template; exit status 0 means success.

    ``{project_dir}`` and ``{test_file}`` are replaced by shell-quoted paths.
    """

    command: str
    timeout: float = 300.0

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("adapter timeout must be positive")

    def render(self, project_dir: Path, test_file: Path) -> str:
        values = {"project_dir": shlex.quote(str(project_dir)), "test_file": shlex.quote(str(test_file))}
        return re.sub(r"\{(project_dir|test_file)\}", lambda m: values[m.group(1)], self.command)

    def run(self, project_dir: Path, test_file: Path) -> bool:
        """True on exit 0. Raises :class:`subprocess.TimeoutExpired`."""
        proc = subprocess.run(
            self.render(project_dir, test_file), shell=True, cwd=project_dir,
            capture_output=True, text=True, timeout=self.timeout,
        )
        if proc.returncode != 0:
            log.debug("adapter exit %d: %s", proc.returncode, proc.stderr.strip()[:500])
        return proc.returncode == 0


# Leading annotations, then everything up to the first "(" whose last word is the name.
_ANNOTATION = re.compile(r"\s*@[\w$.]+(?:\s*\((?:[^()]|\([^()]*\))*\))?")
_METHOD_NAME = re.compile(r"([A-Za-z_$][\w$]*)\s*\(")


def method_name(text: str) -> tuple[str, int] | None:
    """Declared method name and its offset in ``text``, if recognisable."""
    offset = 0
    while True:
        m = _ANNOTATION.match(text, offset)
        if not m or m.end() == offset:
            break
        offset = m.end()
    m = _METHOD_NAME.search(text, offset)
    if m is None:
        return None
    return m.group(1), m.start(1)


def restore_and_name(candidates: Sequence[CandidateTest]) -> list[CandidateTest]:
    """Decode ``[EOL]`` and make method names unique per target test class.

    The first occurrence of a name keeps it; later ones get the smallest
    positive integer suffix that is not yet taken for that class.
    """
    for c in candidates:
        c.text = decode_flat(c.raw_text)
        c.advance(Status.RESTORED)

    found = {c.id: method_name(c.text) for c in candidates}
    taken: dict[str, set[str]] = {}
    for c in candidates:
        hit = found[c.id]
        if hit is not None:
            taken.setdefault(c.target_classpath, set()).add(hit[0])

    first_seen: dict[str, set[str]] = {}
    for c in candidates:
        hit = found[c.id]
        if hit is not None:
            name, pos = hit
            seen = first_seen.setdefault(c.target_classpath, set())
            if name in seen:
                names = taken[c.target_classpath]
                k = 1
                while f"{name}{k}" in names:
                    k += 1
                new = f"{name}{k}"
                names.add(new)
                c.text = c.text[:pos] + new + c.text[pos + len(name):]
                c.repair_log.append(f"renamed {name} -> {new}")
            else:
                seen.add(name)
        c.advance(Status.NAMED)
    return list(candidates)


def repair_truncation(text: str, max_extra_brackets: int = DEFAULT_MAX_EXTRA_BRACKETS) -> Repair:
    """Fix a test cut off mid-way by the model's output limit.

    Deletes the last (non-blank) line, then appends closing brackets one at
    a time, each on its own line, re-parsing after every addition. Raises
    :class:`RepairRejected` once ``max_extra_brackets`` have been tried.
    """
    if is_parsable(text):
        raise AlreadyParsable(text)
    lines = text.split("\n")
    while lines and not lines[-1].strip():
        lines.pop()
    steps = []
    if lines:
        lines.pop()
        steps.append("delete last line")
    for _ in range(max_extra_brackets):
        lines.append("}")
        steps.append("append }")
        attempt = "\n".join(lines)
        if is_parsable(attempt):
            return Repair(attempt, tuple(steps))
    raise RepairRejected("\n".join(lines), steps)


def _rate(num: int, den: int) -> float | None:
    return 100.0 * num / den if den else None


@dataclass(frozen=True)
class ParseResult:
    kept: list[CandidateTest]
    parse_rate: float | None  # before repair
    parse_rate_repaired: float | None
    total: int


def parse_filter(
    candidates: Sequence[CandidateTest],
    max_extra_brackets: int = DEFAULT_MAX_EXTRA_BRACKETS,
) -> ParseResult:
    """Parse-check every named candidate, repairing failures once.

    ``parse_rate`` counts candidates that parsed as generated; the repaired
    rate also counts successful repairs. Both are None for an empty batch.
    """
    direct = 0
    for c in candidates:
        if is_parsable(c.text):
            c.advance(Status.PARSABLE)
            direct += 1
            continue
        try:
            fixed = repair_truncation(c.text, max_extra_brackets)
        except RepairRejected as exc:
            c.repair_log.extend(exc.steps)
            c.advance(Status.REJECTED_PARSE)
            continue
        c.text = fixed.text
        c.repair_log.extend(fixed.steps)
        c.advance(Status.REPAIRED_PARSABLE)
    kept = [c for c in candidates if c.status in PARSED]
    n = len(candidates)
    return ParseResult(kept, _rate(direct, n), _rate(len(kept), n), n)


def _begin_marker(cid: str) -> str:
    return f"// generated:begin {cid}"


def _end_marker(cid: str) -> str:
    return f"// generated:end {cid}"


def _remove_block(source: str, cid: str) -> str:
    begin = source.find(_begin_marker(cid) + "\n")
    if begin < 0:
        return source
    end_tag = _end_marker(cid) + "\n"
    end = source.find(end_tag, begin)
    if end < 0:
        return source
    return source[:begin] + source[end + len(end_tag):]


def _first_class_body(source: str):
    tree = _java.parse(source)
    if tree.root_node.has_error:
        err = _java.first_error(tree.root_node)
        row, col = err.start_point if err is not None else (0, 0)
        raise JavaSyntaxError("test class does not parse", "<test class>", row + 1, col)
    for node in tree.root_node.named_children:
        if node.type == "class_declaration":
            body = node.child_by_field_name("body")
            if body is not None:
                return tree, body
    raise NoClassBody("no class declaration in test source")


def _declared_methods(body, src: bytes) -> set[str]:
    names = set()
    for member in body.named_children:
        if member.type == "method_declaration":
            name = member.child_by_field_name("name")
            if name is not None:
                names.add(_java.node_text(name, src))
    return names


def inject_test(candidate: CandidateTest, test_class_source: str) -> str:
    """Insert the candidate before the closing brace of the first class.

    The method is wrapped in marker comments carrying the candidate id, so
    injecting the same candidate again replaces the earlier copy.
    """
    if candidate.status not in AT_LEAST_PARSABLE:
        raise InvalidTransition(f"{candidate.id}: cannot inject a {candidate.status.value} candidate")
    source = _remove_block(test_class_source, candidate.id)
    tree, body = _first_class_body(source)
    src = source.encode("utf-8")
    hit = method_name(candidate.text)
    if hit is not None and hit[0] in _declared_methods(body, src):
        raise CollisionAfterRename(f"{candidate.id}: {hit[0]} already declared in the test class")
    close = body.end_byte - 1  # the body's closing brace
    head = src[:close].decode("utf-8")
    if not head.endswith("\n"):
        head += "\n"
    block = f"{_begin_marker(candidate.id)}\n{candidate.text.rstrip()}\n{_end_marker(candidate.id)}\n"
    return head + block + src[close:].decode("utf-8")


_TEST_MARK = re.compile(r"@(?:[\w$]+\.)*(?:Test|ParameterizedTest|RepeatedTest|TestFactory|TestTemplate)\b")


def clean_test_class(source: str) -> str:
    """The test class with its test methods removed (fixtures and helpers kept)."""
    tree, body = _first_class_body(source)
    src = source.encode("utf-8")
    cuts = []
    for member in body.named_children:
        if member.type != "method_declaration":
            continue
        name = _java.node_text(member.child_by_field_name("name"), src)
        mods = next((c for c in member.children if c.type == "modifiers"), None)
        annotated = mods is not None and _TEST_MARK.search(_java.node_text(mods, src))
        if annotated or name.startswith("test"):
            # take the whole line span so no blank stubs are left behind
            start = src.rfind(b"\n", 0, member.start_byte) + 1
            if src[start:member.start_byte].strip():
                start = member.start_byte
            end = member.end_byte
            nl = src.find(b"\n", end)
            if nl >= 0 and not src[end:nl].strip():
                end = nl + 1
            cuts.append((start, end))
    out = bytearray(src)
    for start, end in reversed(cuts):
        del out[start:end]
    return out.decode("utf-8")


def _shell_for(path: Path) -> str:
    # no existing test class: synthesize one in the package implied by the path
    parts = path.with_suffix("").parts
    pkg = ""
    if "java" in parts:
        idx = len(parts) - 1 - parts[::-1].index("java")
        pkg = ".".join(parts[idx + 1:-1])
    header = f"package {pkg};\n\n" if pkg else ""
    return f"{header}public class {path.stem} {{\n}}\n"


@dataclass(frozen=True)
class CompileResult:
    kept: list[CandidateTest]
    rate: float | None
    total: int
    eligible: int


def _safe(cid: str) -> str:
    return re.sub(r"[^\w.-]", "_", cid)


def _one_at_a_time(
    candidates: Sequence[CandidateTest],
    project_dir: Path,
    adapter: CompileAdapter,
    eligible: frozenset[Status],
    ok: Status,
    bad: Status,
    output_dir: Path | None,
    precheck: bool = True,
) -> list[CandidateTest]:
    project_dir = Path(project_dir).resolve()
    todo = [c for c in candidates if c.status in eligible]
    targets = sorted({c.target_classpath for c in todo})
    originals: dict[str, bytes | None] = {}
    for t in targets:
        p = project_dir / t
        originals[t] = p.read_bytes() if p.exists() else None
    try:
        shells = {}
        for t in targets:
            orig = originals[t]
            shells[t] = clean_test_class(orig.decode("utf-8")) if orig is not None else _shell_for(Path(t))
            target = project_dir / t
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(shells[t], encoding="utf-8")
        for t in targets if precheck else ():
            try:
                clean = adapter.run(project_dir, project_dir / t)
            except subprocess.TimeoutExpired:
                raise AdapterTimeout("precheck", adapter.timeout) from None
            if not clean:
                raise PrecheckFailed(f"{t}: project does not pass the adapter with an empty test class")
        for c in todo:
            path = project_dir / c.target_classpath
            try:
                injected = inject_test(c, shells[c.target_classpath])
            except (NoClassBody, CollisionAfterRename, JavaSyntaxError) as exc:
                log.warning("%s: not injectable: %s", c.id, exc)
                c.repair_log.append(f"inject failed: {exc}")
                c.advance(bad)
                continue
            path.write_text(injected, encoding="utf-8")
            try:
                passed = adapter.run(project_dir, path)
            except subprocess.TimeoutExpired:
                raise AdapterTimeout(c.id, adapter.timeout) from None
            finally:
                path.write_text(shells[c.target_classpath], encoding="utf-8")
            c.advance(ok if passed else bad)
    finally:
        for t, orig in originals.items():
            p = project_dir / t
            if orig is None:
                p.unlink(missing_ok=True)
            else:
                p.write_bytes(orig)
    if output_dir is not None:
        write_candidates(todo, output_dir)
    return todo


def compile_filter(
    candidates: Sequence[CandidateTest],
    project_dir: str | Path,
    adapter: CompileAdapter,
    *,
    output_dir: str | Path | None = None,
    denominator: str = "all",
    precheck: bool = True,
) -> CompileResult:
    """Inject each parsable candidate alone into a cleaned test class and compile.

    ``denominator`` is ``"all"`` (every candidate in the batch, so the rate
    never exceeds the parse rate) or ``"parsable"``. With ``precheck`` the
    adapter must first accept every cleaned test class, else
    :class:`PrecheckFailed`.
    """
    if denominator not in ("all", "parsable"):
        raise ValueError(f"unknown denominator {denominator!r}")
    out = Path(output_dir) if output_dir is not None else None
    tried = _one_at_a_time(candidates, Path(project_dir), adapter, PARSED,
                           Status.COMPILABLE, Status.REJECTED_COMPILE, out, precheck)
    kept = [c for c in tried if c.status is Status.COMPILABLE]
    den = len(candidates) if denominator == "all" else len(tried)
    return CompileResult(kept, _rate(len(kept), den), len(candidates), len(tried))


def run_filter(
    candidates: Sequence[CandidateTest],
    project_dir: str | Path,
    adapter: CompileAdapter,
    *,
    output_dir: str | Path | None = None,
    precheck: bool = True,
) -> CompileResult:
    """Same protocol as :func:`compile_filter`, marking Passing or Failing."""
    out = Path(output_dir) if output_dir is not None else None
    tried = _one_at_a_time(candidates, Path(project_dir), adapter, frozenset({Status.COMPILABLE}),
                           Status.PASSING, Status.FAILING, out, precheck)
    kept = [c for c in tried if c.status is Status.PASSING]
    return CompileResult(kept, _rate(len(kept), len(candidates)), len(candidates), len(tried))


def write_candidates(candidates: Iterable[CandidateTest], output_dir: str | Path) -> list[Path]:
    """One ``<id>.<status>.java`` file per candidate."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for c in candidates:
        p = out / f"{_safe(c.id)}.{c.status.value}.java"
        p.write_text(c.text if c.text.endswith("\n") else c.text + "\n", encoding="utf-8")
        written.append(p)
    return written


@dataclass(frozen=True)
class BatchSummary:
    total: int
    counts: dict[str, int]
    parse_rate: float | None
    parse_rate_repaired: float | None
    compile_rate: float | None
    pass_rate: float | None = None

    def to_json(self) -> str:
        return json.dumps({
            "total": self.total,
            "counts": self.counts,
            "parse_rate": self.parse_rate,
            "parse_rate_repaired": self.parse_rate_repaired,
            "compile_rate": self.compile_rate,
            "pass_rate": self.pass_rate,
        }, sort_keys=True)


def summarize(
    candidates: Sequence[CandidateTest],
    parse: ParseResult,
    compiled: CompileResult | None = None,
    ran: CompileResult | None = None,
) -> BatchSummary:
    counts = {s.value: 0 for s in Status}
    for c in candidates:
        counts[c.status.value] += 1
    return BatchSummary(
        total=len(candidates),
        counts=counts,
        parse_rate=parse.parse_rate,
        parse_rate_repaired=parse.parse_rate_repaired,
        compile_rate=compiled.rate if compiled else None,
        pass_rate=ran.rate if ran else None,
    )


def candidate_record(c: CandidateTest) -> dict:
    return {
        "id": c.id,
        "instance_id": c.instance_id,
        "target_classpath": c.target_classpath,
        "status": c.status.value,
        "raw_text": c.raw_text,
        "text": c.text,
        "repair_log": list(c.repair_log),
    }


def candidate_from_record(rec: dict) -> CandidateTest:
    return CandidateTest(
        id=rec["id"],
        raw_text=rec["raw_text"],
        target_classpath=rec.get("target_classpath", ""),
        text=rec.get("text", ""),
        status=Status(rec["status"]),
        repair_log=list(rec.get("repair_log", [])),
        instance_id=rec.get("instance_id", ""),
    )


def tree_digest(root: str | Path, exclude: Sequence[str] = ()) -> str:
    """Content hash of every file under ``root`` (for hygiene checks)."""
    root = Path(root)
    h = hashlib.sha256()
    skip = [root / e for e in exclude]
    for p in sorted(root.rglob("*")):
        if not p.is_file() or any(p.is_relative_to(s) for s in skip):
            continue
        h.update(str(p.relative_to(root)).encode())
        h.update(b"\0")
        h.update(p.read_bytes())
        h.update(b"\0")
    return h.hexdigest()

