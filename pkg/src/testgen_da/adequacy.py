"""Test adequacy: line coverage, mutation scores, augmentation and reporting.

Percentages are kept at full precision; rounding to two decimals happens only
when a table is rendered. A metric whose denominator is empty is ``None``
(shown as ``NA``) and is skipped by aggregation, which reports how many were
skipped.
"""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .coverage_map import CloverLines, CoverageReport

Line = tuple[str, int]

METRICS = (
    "parse_rate",
    "compile_rate",
    "bleu",
    "codebleu",
    "line_coverage",
    "mutation_score",
    "adapted_mutation_score",
)

METRIC_LABELS = {
    "parse_rate": "Parse Rate",
    "compile_rate": "Compile Rate",
    "bleu": "BLEU",
    "codebleu": "CodeBLEU",
    "line_coverage": "Line Coverage",
    "mutation_score": "Mutation Score",
    "adapted_mutation_score": "Adapted MS",
}


class EmptyProject(ValueError):
    pass


class MismatchedUniverse(ValueError):
    pass


@dataclass(frozen=True)
class CoverageSummary:
    project: str
    covered: frozenset[Line]
    total_lines: int
    source_root: str = ""

    def __post_init__(self):
        object.__setattr__(self, "covered", frozenset(self.covered))
        if len(self.covered) > self.total_lines:
            raise ValueError(f"{self.project}: {len(self.covered)} covered lines exceed total {self.total_lines}")
        if self.source_root:
            prefix = self.source_root.rstrip("/") + "/"
            stray = [f for f, _ in self.covered if not f.startswith(prefix)]
            if stray:
                raise ValueError(f"{self.project}: covered line outside {self.source_root}: {stray[0]}")


def summary_from_clover(project: str, lines: CloverLines, source_root: str = "") -> CoverageSummary:
    """Summary from an aggregate Clover report; its line universe is the total."""
    return CoverageSummary(project, lines.covered, len(lines.universe), source_root)


def summary_from_tests(
    project: str,
    report: CoverageReport,
    tests: Iterable[str],
    total_lines: int,
    source_root: str = "",
) -> CoverageSummary:
    """Union of the lines covered by ``tests`` in a per-test report."""
    covered: set[Line] = set()
    for t in tests:
        covered |= report.lines.get(t, set())
    return CoverageSummary(project, frozenset(covered), total_lines, source_root)


def line_coverage(summary: CoverageSummary) -> float:
    if summary.total_lines == 0:
        raise EmptyProject(f"{summary.project}: no countable lines")
    return 100.0 * len(summary.covered) / summary.total_lines


@dataclass(frozen=True)
class Mutant:
    covered_by: frozenset[str]
    killed_by: frozenset[str]


class KillMatrix:
    """Mutant id -> tests covering it and tests killing it."""

    def __init__(self, mutants: Mapping[str, Mutant] | None = None):
        self.mutants: dict[str, Mutant] = {}
        for mid, m in (mutants or {}).items():
            self.add(mid, m.covered_by, m.killed_by)

    def add(self, mutant_id: str, covered_by: Iterable[str] = (), killed_by: Iterable[str] = ()) -> None:
        covered, killed = frozenset(covered_by), frozenset(killed_by)
        if not killed <= covered:
            raise ValueError(f"mutant {mutant_id}: killed by tests that do not cover it: {sorted(killed - covered)}")
        self.mutants[mutant_id] = Mutant(covered, killed)

    def __len__(self) -> int:
        return len(self.mutants)

    def ids(self) -> frozenset[str]:
        return frozenset(self.mutants)

    def killed(self) -> frozenset[str]:
        return frozenset(k for k, m in self.mutants.items() if m.killed_by)

    def covered(self) -> frozenset[str]:
        return frozenset(k for k, m in self.mutants.items() if m.covered_by)

    def restrict(self, tests: Iterable[str]) -> "KillMatrix":
        """Only the given tests, e.g. those that pass on the original program."""
        keep = frozenset(tests)
        return KillMatrix({k: Mutant(m.covered_by & keep, m.killed_by & keep) for k, m in self.mutants.items()})


def mutation_scores(km: KillMatrix) -> tuple[float | None, float | None]:
    """``(killed / all mutants, killed / covered mutants)`` in percent."""
    killed, covered = len(km.killed()), len(km.covered())
    standard = 100.0 * killed / len(km) if len(km) else None
    adapted = 100.0 * killed / covered if covered else None
    return standard, adapted


def augmentation_diff(
    model: CoverageSummary, baseline: CoverageSummary, developer: CoverageSummary,
) -> tuple[int, float]:
    """Lines covered by the model but by neither the baseline nor developers."""
    for other in (baseline, developer):
        if other.total_lines != model.total_lines or other.source_root != model.source_root:
            raise MismatchedUniverse(
                f"{other.project}: {other.total_lines} lines under {other.source_root!r} vs "
                f"{model.total_lines} under {model.source_root!r}"
            )
    if model.total_lines == 0:
        raise EmptyProject(f"{model.project}: no countable lines")
    new = model.covered - (baseline.covered | developer.covered)
    return len(new), 100.0 * len(new) / model.total_lines


def new_mutants_killed(model_km: KillMatrix, baseline_km: KillMatrix) -> tuple[int, float]:
    """Mutants killed by the model's tests but not by the baseline's."""
    if model_km.ids() != baseline_km.ids():
        raise MismatchedUniverse(f"{len(model_km)} vs {len(baseline_km)} mutants, or different ids")
    if not len(model_km):
        raise EmptyProject("no mutants")
    new = model_km.killed() - baseline_km.killed()
    return len(new), 100.0 * len(new) / len(model_km)


def _split_ids(cell: str) -> list[str]:
    return [t for t in (s.strip() for s in cell.split(";")) if t]


def read_kill_matrix(path: str | Path) -> KillMatrix:
    """Read ``mutant_id,covered_by,killed_by`` with ``;``-separated test ids."""
    km = KillMatrix()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"mutant_id", "covered_by", "killed_by"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            km.add(row["mutant_id"].strip(), _split_ids(row["covered_by"]), _split_ids(row["killed_by"]))
    return km


def write_kill_matrix(km: KillMatrix, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mutant_id", "covered_by", "killed_by"])
        for mid in sorted(km.mutants):
            m = km.mutants[mid]
            w.writerow([mid, ";".join(sorted(m.covered_by)), ";".join(sorted(m.killed_by))])


def _pairs(path: Path) -> list[tuple[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if rows and not rows[0][0].strip().isdigit():
        rows = rows[1:]  # header
    return [(r[0].strip(), r[1].strip()) for r in rows if len(r) >= 2]


def read_major_kill_map(
    kill_map: str | Path,
    *,
    cov_map: str | Path | None = None,
    test_map: str | Path | None = None,
    mutant_ids: Iterable[str] | None = None,
) -> KillMatrix:
    """Import Major's ``killMap.csv`` (``TestNo,MutantNo[,reason]`` rows).

    ``covMap.csv`` gives coverage pairs in the same layout; without it a kill
    implies coverage. ``testMap.csv`` maps test numbers to names. The mutant
    universe defaults to every mutant mentioned.
    """
    names = dict(_pairs(Path(test_map))) if test_map else {}
    covered: dict[str, set[str]] = {}
    killed: dict[str, set[str]] = {}
    for test, mutant in _pairs(Path(kill_map)):
        killed.setdefault(mutant, set()).add(names.get(test, test))
    if cov_map:
        for test, mutant in _pairs(Path(cov_map)):
            covered.setdefault(mutant, set()).add(names.get(test, test))
    for mutant, tests in killed.items():
        covered.setdefault(mutant, set()).update(tests)
    universe = set(mutant_ids) if mutant_ids is not None else set(covered) | set(killed)
    km = KillMatrix()
    for mid in sorted(universe, key=lambda s: (len(s), s)):
        km.add(mid, covered.get(mid, ()), killed.get(mid, ()))
    return km


@dataclass(frozen=True)
class ProjectReport:
    project: str
    parse_rate: float | None = None
    compile_rate: float | None = None
    bleu: float | None = None
    codebleu: float | None = None
    line_coverage: float | None = None
    mutation_score: float | None = None
    adapted_mutation_score: float | None = None

    def __post_init__(self):
        for name in METRICS:
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 100.0:
                raise ValueError(f"{self.project}: {name}={v} outside [0, 100]")

    def values(self) -> dict[str, float | None]:
        return {m: getattr(self, m) for m in METRICS}


@dataclass(frozen=True)
class Aggregate:
    mean: dict[str, float | None]
    median: dict[str, float | None]
    na_count: dict[str, int]
    n_rows: int


def aggregate_values(rows: Sequence[Mapping[str, float | None]], keys: Sequence[str]) -> Aggregate:
    """Mean and median per key over rows, skipping ``None`` values."""
    if not rows:
        raise ValueError("need at least one row")
    mean, median, na = {}, {}, {}
    for k in keys:
        present = [r[k] for r in rows if r.get(k) is not None]
        na[k] = len(rows) - len(present)
        mean[k] = statistics.fmean(present) if present else None
        median[k] = statistics.median(present) if present else None
    return Aggregate(mean, median, na, len(rows))


def aggregate_report(rows: Sequence[ProjectReport]) -> Aggregate:
    return aggregate_values([r.values() for r in rows], METRICS)


def improvement(a: Aggregate | Mapping[str, float | None], b: Aggregate | Mapping[str, float | None]) -> dict[str, float | None]:
    """Per-metric ``a - b`` in percentage points (means when given aggregates)."""
    va = a.mean if isinstance(a, Aggregate) else dict(a)
    vb = b.mean if isinstance(b, Aggregate) else dict(b)
    if set(va) != set(vb):
        raise ValueError(f"metric sets differ: {sorted(set(va) ^ set(vb))}")
    return {k: (None if va[k] is None or vb[k] is None else va[k] - vb[k]) for k in va}


@dataclass(frozen=True)
class ComparisonRow:
    """One project's model-vs-baseline adequacy comparison."""

    project: str
    total_lines: int | None = None
    model_cl: int | None = None
    model_cl_percent: float | None = None
    baseline_cl: int | None = None
    baseline_cl_percent: float | None = None
    new_cl: int | None = None
    new_cl_percent: float | None = None
    model_ms: float | None = None
    baseline_ms: float | None = None
    model_ams: float | None = None
    baseline_ams: float | None = None
    new_mk: int | None = None
    new_mk_percent: float | None = None

    @classmethod
    def numeric_fields(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls) if f.name != "project")


def comparison_row(
    model: CoverageSummary,
    baseline: CoverageSummary,
    developer: CoverageSummary,
    model_km: KillMatrix | None = None,
    baseline_km: KillMatrix | None = None,
) -> ComparisonRow:
    new_cl, new_cl_pct = augmentation_diff(model, baseline, developer)
    row = dict(
        project=model.project,
        total_lines=model.total_lines,
        model_cl=len(model.covered),
        model_cl_percent=line_coverage(model),
        baseline_cl=len(baseline.covered),
        baseline_cl_percent=line_coverage(baseline),
        new_cl=new_cl,
        new_cl_percent=new_cl_pct,
    )
    if model_km is not None and baseline_km is not None:
        row["model_ms"], row["model_ams"] = mutation_scores(model_km)
        row["baseline_ms"], row["baseline_ams"] = mutation_scores(baseline_km)
        row["new_mk"], row["new_mk_percent"] = new_mutants_killed(model_km, baseline_km)
    return ComparisonRow(**row)


def aggregate_comparison(rows: Sequence[ComparisonRow]) -> Aggregate:
    return aggregate_values([asdict(r) for r in rows], ComparisonRow.numeric_fields())


def _fmt(v: float | None) -> str:
    return "NA" if v is None else f"{v:.2f}"


def render_table(rows: Sequence[ProjectReport], aggregate: Aggregate | None = None, title: str = "") -> str:
    """Aligned plain-text table: metrics as rows, projects (then AVG, MEDIAN) as columns."""
    if aggregate is None and rows:
        aggregate = aggregate_report(rows)
    header = ["Metric", *(r.project for r in rows)]
    if aggregate is not None:
        header += ["AVG", "MEDIAN"]
    body = []
    for m in METRICS:
        line = [METRIC_LABELS[m], *(_fmt(getattr(r, m)) for r in rows)]
        if aggregate is not None:
            line += [_fmt(aggregate.mean[m]), _fmt(aggregate.median[m])]
        body.append(line)
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]

    def fmt_row(cells):
        first = cells[0].ljust(widths[0])
        rest = [c.rjust(w) for c, w in zip(cells[1:], widths[1:])]
        return "  ".join([first, *rest]).rstrip()

    lines = [title] if title else []
    lines.append(fmt_row(header))
    lines.append("  ".join("-" * w for w in widths))
    lines.extend(fmt_row(r) for r in body)
    if aggregate is not None and any(aggregate.na_count.values()):
        skipped = ", ".join(f"{METRIC_LABELS[m]} {n}" for m, n in aggregate.na_count.items() if n)
        lines.append(f"NA values excluded from AVG/MEDIAN: {skipped}")
    return "\n".join(lines) + "\n"


def write_report_records(rows: Sequence[ProjectReport], aggregate: Aggregate, path: str | Path) -> None:
    """One JSON record per project, then the mean and median rows."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(json.dumps({"kind": "project", **asdict(r)}, sort_keys=True) + "\n")
        fh.write(json.dumps({"kind": "mean", "n_rows": aggregate.n_rows, **aggregate.mean,
                             "na_count": aggregate.na_count}, sort_keys=True) + "\n")
        fh.write(json.dumps({"kind": "median", "n_rows": aggregate.n_rows, **aggregate.median}, sort_keys=True) + "\n")


def read_report_records(path: str | Path) -> list[ProjectReport]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            rec = json.loads(raw)
            if rec.get("kind") == "project":
                rec.pop("kind")
                out.append(ProjectReport(**rec))
    return out
