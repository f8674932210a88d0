"""Per-test coverage ingestion, the line->test map and covering-test selection."""

from __future__ import annotations

import fnmatch
import json
import logging
import re
import xml.etree.ElementTree as ET
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Iterable, Sequence

from .source_model import SourceFile, parse_class_model, JavaSyntaxError

log = logging.getLogger(__name__)

DEFAULT_TEST_ROOT = "src/test/java"
DEFAULT_EXCLUDE = ("src/test/**",)
SUPPORTED_CLOVER_MAJOR = ("3", "4")
REPORT_NAME = re.compile(r"^coverage-(.+)\.xml$")

Line = tuple[str, int]
LineTestMap = dict  # (file, line) -> list of test ids, in first-seen order


class MalformedReport(ValueError):
    def __init__(self, message: str, position: tuple[int, int] | None = None):
        where = f" at line {position[0]}, column {position[1]}" if position else ""
        super().__init__(message + where)
        self.position = position


class UnknownSchemaVersion(ValueError):
    pass


class EmptyCandidates(ValueError):
    pass


@dataclass(frozen=True)
class TestCase:
    id: str
    class_name: str
    classpath: str
    body: str

    __test__ = False  # not a pytest class


@dataclass
class CoverageReport:
    """Covered lines per test, plus where each test's class lives.

    Test order is significant: it is the order in which tests were ingested
    and it becomes the order of covering tests in the line map.
    """

    lines: dict[str, frozenset[Line]] = field(default_factory=dict)
    classpaths: dict[str, str] = field(default_factory=dict)
    class_names: dict[str, str] = field(default_factory=dict)

    def add(self, test_id: str, lines: Iterable[Line], classpath: str, class_name: str) -> None:
        if test_id in self.lines:
            self.lines[test_id] = self.lines[test_id] | frozenset(lines)
        else:
            self.lines[test_id] = frozenset(lines)
        self.classpaths[test_id] = classpath
        self.class_names[test_id] = class_name

    @property
    def tests(self) -> list[str]:
        return list(self.lines)

    def covered(self) -> set[Line]:
        out: set[Line] = set()
        for s in self.lines.values():
            out |= s
        return out

    def __len__(self) -> int:
        return len(self.lines)


@dataclass(frozen=True)
class CloverLines:
    covered: frozenset[Line]
    universe: frozenset[Line]


def test_class_of(test_id: str) -> str:
    """``com.x.FooTest#testBar`` -> ``com.x.FooTest``."""
    return test_id.split("#", 1)[0]


def classpath_for(test_class: str, test_root: str = DEFAULT_TEST_ROOT) -> str:
    outer = test_class.split("$", 1)[0]
    return str(PurePosixPath(test_root, *outer.split("."))) + ".java"


def is_excluded(path: str, patterns: Sequence[str]) -> bool:
    return any(fnmatch.fnmatchcase(path, p) for p in patterns)


def _file_key(elem: ET.Element, package: str, project_root: Path | None) -> str:
    path = elem.get("path")
    name = elem.get("name", "")
    if path:
        p = Path(path)
        if p.is_absolute() and project_root is not None:
            try:
                return p.resolve().relative_to(project_root.resolve()).as_posix()
            except ValueError:
                pass
        return PurePosixPath(path.replace("\\", "/")).as_posix()
    if package:
        return f"{package.replace('.', '/')}/{name}"
    return name


def _int_attr(elem: ET.Element, name: str, default: int | None = None) -> int:
    raw = elem.get(name)
    if raw is None:
        if default is None:
            raise MalformedReport(f"<line> without '{name}' attribute")
        return default
    try:
        return int(raw)
    except ValueError:
        raise MalformedReport(f"non-integer {name}={raw!r}") from None


def read_clover(
    report_file: str | Path,
    project_root: str | Path | None = None,
    exclude: Sequence[str] = DEFAULT_EXCLUDE,
) -> CloverLines:
    """Covered lines and the full line universe of one Clover XML report.

    Only ``coverage/project/package/file/line`` is read (files directly under
    ``project`` are accepted too); ``testproject`` is ignored. A line counts
    as covered when ``count > 0``, or for ``cond`` lines when either branch
    count is positive.
    """
    try:
        tree = ET.parse(report_file)
    except ET.ParseError as exc:
        raise MalformedReport(f"{report_file}: not well-formed XML", exc.position) from None
    root = tree.getroot()
    if root.tag != "coverage":
        raise MalformedReport(f"{report_file}: root element is <{root.tag}>, expected <coverage>")
    version = root.get("clover")
    if version is not None and version.split(".", 1)[0] not in SUPPORTED_CLOVER_MAJOR:
        raise UnknownSchemaVersion(f"{report_file}: clover schema {version}")

    proj_root = Path(project_root) if project_root is not None else None
    covered: set[Line] = set()
    universe: set[Line] = set()
    for project in root.findall("project"):
        groups = [(pkg.get("name", ""), pkg.findall("file")) for pkg in project.findall("package")]
        groups.append(("", project.findall("file")))
        for package, files in groups:
            for f in files:
                key = _file_key(f, package, proj_root)
                if is_excluded(key, exclude):
                    continue
                for ln in f.findall("line"):
                    num = _int_attr(ln, "num")
                    if num <= 0:
                        raise MalformedReport(f"{report_file}: non-positive line number {num} in {key}")
                    universe.add((key, num))
                    if ln.get("type") == "cond" and ln.get("count") is None:
                        hit = _int_attr(ln, "truecount", 0) > 0 or _int_attr(ln, "falsecount", 0) > 0
                    else:
                        hit = _int_attr(ln, "count", 0) > 0
                    if hit:
                        covered.add((key, num))
    return CloverLines(frozenset(covered), frozenset(universe))


def ingest_clover(
    report_file: str | Path,
    test_id: str | None = None,
    *,
    project_root: str | Path | None = None,
    test_root: str = DEFAULT_TEST_ROOT,
    exclude: Sequence[str] = DEFAULT_EXCLUDE,
    classpath: str | None = None,
) -> CoverageReport:
    """Read a single-test Clover report into a :class:`CoverageReport`.

    The test id defaults to the ``coverage-<testid>.xml`` file-name
    convention. A test that covers nothing is still recorded, with an empty
    line set.
    """
    if test_id is None:
        m = REPORT_NAME.match(Path(report_file).name)
        if m is None:
            raise ValueError(f"cannot derive a test id from {Path(report_file).name!r}; pass test_id")
        test_id = m.group(1)
    lines = read_clover(report_file, project_root, exclude)
    cls = test_class_of(test_id)
    report = CoverageReport()
    report.add(test_id, lines.covered, classpath or classpath_for(cls, test_root), cls)
    return report


def merge_reports(reports: Iterable[CoverageReport]) -> CoverageReport:
    merged = CoverageReport()
    for r in reports:
        for t in r.tests:
            merged.add(t, r.lines[t], r.classpaths[t], r.class_names[t])
    return merged


def ingest_clover_dir(
    report_dir: str | Path,
    *,
    project_root: str | Path | None = None,
    test_root: str = DEFAULT_TEST_ROOT,
    exclude: Sequence[str] = DEFAULT_EXCLUDE,
    workers: int | None = None,
) -> CoverageReport:
    """Merge every ``coverage-<testid>.xml`` in a directory.

    Reports may be read concurrently; the merge always follows file-name
    sort order.
    """
    paths = sorted(
        (p for p in Path(report_dir).iterdir() if REPORT_NAME.match(p.name)),
        key=lambda p: p.name,
    )

    def one(p: Path) -> CoverageReport:
        return ingest_clover(p, project_root=project_root, test_root=test_root, exclude=exclude)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(one, paths))
    else:
        reports = [one(p) for p in paths]
    return merge_reports(reports)


def build_line2test(cov: CoverageReport) -> LineTestMap:
    """Invert per-test coverage into ``(file, line) -> [test ids]``."""
    out: LineTestMap = {}
    for test_id in cov.tests:
        for line in sorted(cov.lines[test_id]):
            out.setdefault(line, []).append(test_id)
    return dict(sorted(out.items()))


_CAMEL = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|\d+")


def camel_tokens(name: str) -> list[str]:
    """``FooCoreTest`` -> ``['Foo', 'Core', 'Test']``."""
    return _CAMEL.findall(name)


def simple_class_name(name: str) -> str:
    return re.split(r"[.$]", name)[-1]


def class_name_matches(candidate_class: str, focal_class: str, mode: str = "token") -> bool:
    """Does a test class name mention the focal class?

    ``token`` mode requires the focal name's camel-case tokens to appear as a
    contiguous run in the candidate's tokens (Foo matches FooTest, TestFoo and
    FooCoreTest, not FooterTest). ``substring`` is plain containment.
    """
    cand = simple_class_name(candidate_class)
    focal = simple_class_name(focal_class)
    if mode == "substring":
        return focal in cand
    if mode != "token":
        raise ValueError(f"unknown match mode {mode!r}")
    ct, ft = camel_tokens(cand), camel_tokens(focal)
    if not ft:
        return False
    return any(ct[i:i + len(ft)] == ft for i in range(len(ct) - len(ft) + 1))


def select_covering_test(
    line: Line,
    candidates: Sequence[TestCase],
    focal_class: str,
    mode: str = "token",
) -> TestCase:
    """Pick the one test that will be the target output for ``line``.

    First candidate whose class name matches the focal class; otherwise the
    first candidate.
    """
    if not candidates:
        raise EmptyCandidates(f"no covering tests for {line[0]}:{line[1]}")
    for c in candidates:
        if class_name_matches(c.class_name, focal_class, mode):
            return c
    return candidates[0]


_TEST_ANNOTATION = re.compile(r"@(?:[\w$]+\.)*(?:Test|ParameterizedTest|RepeatedTest|TestFactory|TestTemplate)\b")


def extract_test_cases(files: Sequence[SourceFile]) -> tuple[dict[str, TestCase], list[str]]:
    """Catalog test methods of test sources as ``{test id: TestCase}``.

    A test method is annotated ``@Test`` (or a JUnit 5 variant), or is a
    JUnit 3 style ``test*`` method. Ids are ``<qualified class>#<method>``.
    """
    catalog: dict[str, TestCase] = {}
    diagnostics: list[str] = []
    for f in files:
        try:
            model = parse_class_model(f)
        except JavaSyntaxError as exc:
            diagnostics.append(f"skipped {exc}")
            continue
        for _, methods in model:
            for m in methods:
                if m.is_constructor:
                    continue
                if not (_TEST_ANNOTATION.search(m.signature) or m.name.startswith("test")):
                    continue
                tid = f"{m.owner_class}#{m.name}"
                if tid in catalog:
                    diagnostics.append(f"{f.path}:{m.start_line}: overloaded test {tid} ignored")
                    continue
                catalog[tid] = TestCase(tid, m.owner_class, f.path, m.body)
    return catalog, diagnostics


def write_line2test(mapping: LineTestMap, path: str | Path) -> None:
    """``file<TAB>line<TAB>testid[,testid...]`` per line, sorted by (file, line)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (f, ln), tests in sorted(mapping.items()):
            if any("," in t or "\t" in t for t in tests) or "\t" in f:
                raise ValueError(f"test id or path not representable in line map: {f}:{ln}")
            fh.write(f"{f}\t{ln}\t{','.join(tests)}\n")


def read_line2test(path: str | Path) -> LineTestMap:
    out: LineTestMap = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            raw = raw.rstrip("\n")
            if not raw:
                continue
            parts = raw.split("\t")
            if len(parts) != 3:
                raise MalformedReport(f"{path}: expected 3 tab-separated fields", (n, 0))
            out[(parts[0], int(parts[1]))] = parts[2].split(",")
    return out


def write_coverage_report(cov: CoverageReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in cov.tests:
            rec = {
                "test": t,
                "class_name": cov.class_names[t],
                "classpath": cov.classpaths[t],
                "lines": [[f, ln] for f, ln in sorted(cov.lines[t])],
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_coverage_report(path: str | Path) -> CoverageReport:
    cov = CoverageReport()
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            if raw.strip():
                r = json.loads(raw)
                cov.add(r["test"], ((f, ln) for f, ln in r["lines"]), r["classpath"], r["class_name"])
    return cov


def write_test_catalog(catalog: dict[str, TestCase], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in sorted(catalog):
            tc = catalog[t]
            rec = {"id": tc.id, "class_name": tc.class_name, "classpath": tc.classpath, "body": tc.body}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_test_catalog(path: str | Path) -> dict[str, TestCase]:
    with open(path, encoding="utf-8") as fh:
        recs = [json.loads(raw) for raw in fh if raw.strip()]
    return {r["id"]: TestCase(r["id"], r["class_name"], r["classpath"], r["body"]) for r in recs}
