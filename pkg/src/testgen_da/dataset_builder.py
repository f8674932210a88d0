"""Project-level dataset: (target line + focal context) -> covering test.

Also the leave-tests-out evaluation split: whole tests, never individual
lines, go to the evaluation side, so no target test body is seen in training.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

from .coverage_map import LineTestMap, TestCase, select_covering_test
from .flat import SEP, decode_flat, encode_flat, join_unescaped, split_unescaped
from .source_model import ProjectSkeleton, build_focal_input

log = logging.getLogger(__name__)

__all__ = [
    "DatasetInstance",
    "DegenerateSplit",
    "InstanceMeta",
    "Split",
    "XorShift64",
    "build_instances",
    "decode_flat",
    "encode_flat",
    "eval_size",
    "read_dataset",
    "split_leave_tests_out",
    "write_dataset",
    "write_split",
]

MASK64 = (1 << 64) - 1


class DegenerateSplit(ValueError):
    pass


@dataclass(frozen=True)
class InstanceMeta:
    project: str
    file: str
    line: int
    test_id: str
    focal_class: str
    focal_method: str = ""
    test_classpath: str = ""


@dataclass(frozen=True)
class DatasetInstance:
    input_encoded: str
    output_encoded: str
    meta: InstanceMeta

    @property
    def id(self) -> str:
        return f"{self.meta.file}:{self.meta.line}"

    @property
    def test_id(self) -> str:
        return self.meta.test_id


@dataclass(frozen=True)
class Split:
    train: tuple[DatasetInstance, ...]
    eval: tuple[DatasetInstance, ...]
    seed: int
    ratio: float

    @property
    def eval_tests(self) -> list[str]:
        return sorted({i.test_id for i in self.eval})

    @property
    def train_tests(self) -> list[str]:
        return sorted({i.test_id for i in self.train})


def _resolver(paths: Sequence[str]):
    """Map coverage file keys onto skeleton paths (exact, then unique suffix)."""
    cache: dict[str, str | None] = {}

    def resolve(key: str) -> str | None:
        if key in cache:
            return cache[key]
        if key in paths:
            hit = key
        else:
            matches = [p for p in paths if p.endswith("/" + key) or key.endswith("/" + p)]
            hit = matches[0] if len(matches) == 1 else None
        cache[key] = hit
        return hit

    return resolve


def build_instances(
    mapping: LineTestMap,
    skeleton: ProjectSkeleton,
    tests: Mapping[str, TestCase],
    project: str = "",
    match_mode: str = "token",
) -> tuple[list[DatasetInstance], list[str]]:
    """One instance per mapped line that lies inside a known method.

    Returns the instances (ordered by file, line) and diagnostics for lines
    that were skipped: outside any method, no catalogued covering test, or an
    input identical to an earlier line's but with a different target test.
    """
    resolve = _resolver(list(skeleton.bodies))
    instances: list[DatasetInstance] = []
    diagnostics: list[str] = []
    seen_inputs: dict[str, tuple[str, str]] = {}

    for (file_key, line), test_ids in sorted(mapping.items()):
        path = resolve(file_key)
        method = skeleton.method_at(path, line) if path is not None else None
        if method is None:
            diagnostics.append(f"{file_key}:{line}: not inside a known method")
            continue
        ctx = skeleton.class_contexts.get(method.owner_class)
        if ctx is None:
            diagnostics.append(f"{file_key}:{line}: no class context for {method.owner_class}")
            continue
        candidates = [tests[t] for t in test_ids if t in tests]
        missing = [t for t in test_ids if t not in tests]
        if missing:
            diagnostics.append(f"{file_key}:{line}: covering tests not in catalog: {','.join(missing)}")
        if not candidates:
            continue
        chosen = select_covering_test((path, line), candidates, ctx.simple_name, match_mode)

        target = method.body.split("\n")[line - method.start_line].strip()
        unit = build_focal_input(method, ctx, target)
        output = encode_flat(chosen.body)

        prior = seen_inputs.get(unit.encoded_input)
        if prior is not None and prior[0] != output:
            diagnostics.append(
                f"{path}:{line}: same input as {prior[1]} with a different target test; dropped"
            )
            continue
        seen_inputs.setdefault(unit.encoded_input, (output, f"{path}:{line}"))

        meta = InstanceMeta(
            project=project,
            file=path,
            line=line,
            test_id=chosen.id,
            focal_class=method.owner_class,
            focal_method=method.name,
            test_classpath=chosen.classpath,
        )
        instances.append(DatasetInstance(unit.encoded_input, output, meta))
    return instances, diagnostics


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class XorShift64:
    """Marsaglia xorshift64 (shifts 13, 7, 17), state seeded via splitmix64.

    Kept deliberately simple so other implementations can reproduce a split
    from the seed alone.
    """

    def __init__(self, seed: int):
        state = _splitmix64(seed & MASK64)
        self.state = state or 0x9E3779B97F4A7C15

    def next(self) -> int:
        x = self.state
        x ^= (x << 13) & MASK64
        x ^= x >> 7
        x ^= (x << 17) & MASK64
        self.state = x
        return x

    def below(self, n: int) -> int:
        return self.next() % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates, from the last index down."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def eval_size(n_tests: int, ratio: float) -> int:
    """Round-half-up of ``ratio * n_tests``, computed exactly."""
    exact = Fraction(str(ratio)) * n_tests
    return int(exact + Fraction(1, 2))


def split_leave_tests_out(
    instances: Sequence[DatasetInstance],
    ratio: float = 0.2,
    *,
    seed: int,
) -> Split:
    """Send a ``ratio`` share of unique tests, with all their lines, to eval.

    Unique test ids are sorted, shuffled with :class:`XorShift64` seeded by
    ``seed``, and the first ``eval_size(N, ratio)`` go to evaluation.
    """
    if not instances:
        raise DegenerateSplit("no instances to split")
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    tests = sorted({i.test_id for i in instances})
    k = eval_size(len(tests), ratio)
    if k == 0 or k == len(tests):
        raise DegenerateSplit(f"{len(tests)} unique tests at ratio {ratio} gives {k} eval tests")
    rng = XorShift64(seed)
    rng.shuffle(tests)
    held_out = set(tests[:k])
    train = tuple(i for i in instances if i.test_id not in held_out)
    evals = tuple(i for i in instances if i.test_id in held_out)
    return Split(train, evals, seed, ratio)


def write_dataset(instances: Sequence[DatasetInstance], path: str | Path) -> tuple[Path, Path]:
    """``input<SEP>output`` per line plus a ``.meta.jsonl`` sidecar."""
    path = Path(path)
    meta_path = path.with_name(path.name + ".meta.jsonl")
    with open(path, "w", encoding="utf-8", newline="\n") as data, \
            open(meta_path, "w", encoding="utf-8", newline="\n") as meta:
        for inst in instances:
            data.write(join_unescaped([inst.input_encoded, inst.output_encoded], SEP) + "\n")
            meta.write(json.dumps(asdict(inst.meta), ensure_ascii=False) + "\n")
    return path, meta_path


def read_dataset(path: str | Path) -> list[DatasetInstance]:
    path = Path(path)
    meta_path = path.with_name(path.name + ".meta.jsonl")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in fh.read().split("\n") if r]
    with open(meta_path, encoding="utf-8") as fh:
        metas = [InstanceMeta(**json.loads(r)) for r in fh if r.strip()]
    if len(rows) != len(metas):
        raise ValueError(f"{path}: {len(rows)} records but {len(metas)} meta records")
    out = []
    for row, meta in zip(rows, metas):
        parts = split_unescaped(row, SEP)
        if len(parts) != 2:
            raise ValueError(f"{path}: record for {meta.file}:{meta.line} lacks a single {SEP}")
        out.append(DatasetInstance(parts[0], parts[1], meta))
    return out


def write_split(split: Split, out_dir: str | Path, prng: str = "xorshift64") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [*write_dataset(split.train, out_dir / "train.txt"), *write_dataset(split.eval, out_dir / "eval.txt")]
    manifest = out_dir / "split.json"
    manifest.write_text(json.dumps({
        "seed": split.seed,
        "ratio": split.ratio,
        "prng": prng,
        "n_train": len(split.train),
        "n_eval": len(split.eval),
        "eval_tests": split.eval_tests,
    }, indent=2) + "\n", encoding="utf-8")
    written.append(manifest)
    return written
