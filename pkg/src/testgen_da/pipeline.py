"""Stage runner: each stage reads files, writes files, and leaves a manifest.

Every stage owns a directory under the run's output dir. Its
``manifest.json`` records the config digest and the SHA-256 of every input
and output file. When a stage is requested again and neither its inputs nor
its config changed, and its outputs are intact, it is skipped and the
manifest notes the cache hit.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import __version__
from .adequacy import (
    ProjectReport,
    aggregate_report,
    line_coverage,
    mutation_scores,
    read_kill_matrix,
    read_report_records,
    render_table,
    summary_from_clover,
    write_report_records,
)
from .config import RunConfig
from .coverage_map import (
    build_line2test,
    extract_test_cases,
    ingest_clover_dir,
    read_clover,
    read_line2test,
    read_test_catalog,
    write_coverage_report,
    write_line2test,
    write_test_catalog,
)
from .dataset_builder import (
    build_instances,
    read_dataset,
    split_leave_tests_out,
    write_dataset,
    write_split,
)
from .flat import decode_flat
from .generation import (
    ChatPrompt,
    render_chat_prompt,
    run_generation,
    split_candidates,
    strip_target_line,
)
from .metrics import corpus_scores
from .post_processor import (
    AT_LEAST_COMPILABLE,
    PARSED,
    CandidateTest,
    CompileAdapter,
    candidate_from_record,
    candidate_record,
    compile_filter,
    parse_filter,
    restore_and_name,
    run_filter,
    summarize,
    write_candidates,
)
from .source_model import build_project_skeletons, load_project_files, read_skeleton, write_skeleton

log = logging.getLogger(__name__)

STAGES = ("extract", "coverage", "dataset", "split", "generate", "postprocess", "metrics", "report")


class StageInputMissing(RuntimeError):
    def __init__(self, stage: str, missing: list[Path]):
        super().__init__(f"stage {stage}: missing input {', '.join(str(m) for m in missing)}")
        self.stage = stage
        self.missing = missing


class StageFailed(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage
        self.cause = cause


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _write_jsonl(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(r) for r in fh if r.strip()]


@dataclass
class StageSpec:
    name: str
    inputs: Callable[[RunConfig], list[Path]]
    config_parts: tuple[str, ...]
    run: Callable[[RunConfig, Path], list[Path]]


def stage_dir(cfg: RunConfig, stage: str) -> Path:
    return cfg.output_dir / stage


def _project_sources(cfg: RunConfig) -> list[Path]:
    root = cfg.project.root
    return sorted(p for p in root.glob(cfg.project.source_glob) if p.is_file())


def _project_tests(cfg: RunConfig) -> list[Path]:
    root = cfg.project.root
    return sorted(p for p in root.glob(cfg.project.test_glob) if p.is_file())


# --- stages ------------------------------------------------------------------

def _run_extract(cfg: RunConfig, out: Path) -> list[Path]:
    files = load_project_files(cfg.project.root, cfg.project.source_glob)
    skel = build_project_skeletons(files, workers=cfg.workers)
    for d in skel.diagnostics:
        log.warning("extract: %s", d)
    return write_skeleton(skel, out)


def _run_coverage(cfg: RunConfig, out: Path) -> list[Path]:
    cov = ingest_clover_dir(
        cfg.project.coverage_dir,
        project_root=cfg.project.root,
        test_root=cfg.project.test_root,
        workers=cfg.workers,
    )
    tests, diagnostics = extract_test_cases(load_project_files(cfg.project.root, cfg.project.test_glob))
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "line2test.tsv", out / "coverage.jsonl", out / "tests.jsonl", out / "diagnostics.log"]
    write_line2test(build_line2test(cov), paths[0])
    write_coverage_report(cov, paths[1])
    write_test_catalog(tests, paths[2])
    uncatalogued = [t for t in cov.tests if t not in tests]
    diagnostics += [f"covering test not found in test sources: {t}" for t in uncatalogued]
    paths[3].write_text("".join(d + "\n" for d in diagnostics), encoding="utf-8")
    return paths


def _run_dataset(cfg: RunConfig, out: Path) -> list[Path]:
    skel = read_skeleton(stage_dir(cfg, "extract"))
    cov_dir = stage_dir(cfg, "coverage")
    mapping = read_line2test(cov_dir / "line2test.tsv")
    tests = read_test_catalog(cov_dir / "tests.jsonl")
    instances, diagnostics = build_instances(mapping, skel, tests, cfg.project.name, cfg.match_mode)
    out.mkdir(parents=True, exist_ok=True)
    written = list(write_dataset(instances, out / "all.txt"))
    diag = out / "diagnostics.log"
    diag.write_text("".join(d + "\n" for d in diagnostics), encoding="utf-8")
    return written + [diag]


def _run_split(cfg: RunConfig, out: Path) -> list[Path]:
    instances = read_dataset(stage_dir(cfg, "dataset") / "all.txt")
    split = split_leave_tests_out(instances, cfg.ratio, seed=cfg.seed)
    return write_split(split, out)


def build_requests(cfg: RunConfig, eval_instances) -> list[dict]:
    """Requests for the eval set: one per line (flat) or per focal method (chat)."""
    if cfg.backend.request_mode == "flat":
        return [{"id": inst.id, "instances": [inst.id], "request": inst.input_encoded,
                 "target_classpath": inst.meta.test_classpath} for inst in eval_instances]
    groups: dict[tuple, list] = {}
    for inst in eval_instances:
        key = (inst.meta.file, inst.meta.focal_class, strip_target_line(inst.input_encoded))
        groups.setdefault(key, []).append(inst)
    requests = []
    for (file, focal_class, method_text), insts in groups.items():
        prompt = render_chat_prompt(cfg.project.name, decode_flat(method_text))
        requests.append({
            "id": f"{file}@{insts[0].meta.line}",
            "instances": [i.id for i in insts],
            "request": prompt.as_json(),
            "target_classpath": insts[0].meta.test_classpath,
        })
    return requests


def _as_request(rec: dict):
    req = rec["request"]
    if isinstance(req, list):
        return ChatPrompt(tuple((m["role"], m["content"]) for m in req))
    return req


def _run_generate(cfg: RunConfig, out: Path) -> list[Path]:
    eval_instances = read_dataset(stage_dir(cfg, "split") / "eval.txt")
    requests = build_requests(cfg, eval_instances)
    out.mkdir(parents=True, exist_ok=True)
    _write_jsonl(out / "requests.jsonl", requests)
    responses, failures = run_generation(
        cfg.backend, [(r["id"], _as_request(r)) for r in requests], out / "run_log.jsonl",
    )
    records = []
    for r in requests:
        resp = responses.get(r["id"])
        if resp is None:
            continue
        records.append({"id": r["id"], "instances": r["instances"], "target_classpath": r["target_classpath"],
                        "backend": resp.backend, "request_hash": resp.request_hash, "raw_text": resp.raw_text})
    _write_jsonl(out / "responses.jsonl", records)
    _write_jsonl(out / "failures.jsonl", [{"id": k, "error": v} for k, v in sorted(failures.items())])
    for k, v in sorted(failures.items()):
        log.warning("generate: %s failed: %s", k, v)
    return [out / "requests.jsonl", out / "responses.jsonl", out / "failures.jsonl"]


def _run_postprocess(cfg: RunConfig, out: Path) -> list[Path]:
    responses = _read_jsonl(stage_dir(cfg, "generate") / "responses.jsonl")
    candidates: list[CandidateTest] = []
    for rec in responses:
        for text in split_candidates(rec["raw_text"]):
            candidates.append(CandidateTest(
                id=f"c{len(candidates):05d}",
                raw_text=text,
                target_classpath=rec["target_classpath"],
                instance_id=rec["id"],
            ))
    restore_and_name(candidates)
    parsed = parse_filter(candidates, cfg.postprocess.max_extra_brackets)
    compiled = ran = None
    out.mkdir(parents=True, exist_ok=True)
    if cfg.postprocess.compile_adapter:
        adapter = CompileAdapter(cfg.postprocess.compile_adapter, cfg.postprocess.adapter_timeout)
        compiled = compile_filter(candidates, cfg.project.root, adapter,
                                  denominator=cfg.postprocess.compile_denominator)
        if cfg.postprocess.run_adapter:
            runner = CompileAdapter(cfg.postprocess.run_adapter, cfg.postprocess.adapter_timeout)
            ran = run_filter(candidates, cfg.project.root, runner)
    cand_dir = out / "candidates"
    if cand_dir.exists():
        for old in cand_dir.glob("*.java"):
            old.unlink()
    written = write_candidates(candidates, cand_dir)
    _write_jsonl(out / "candidates.jsonl", [candidate_record(c) for c in candidates])
    summary = summarize(candidates, parsed, compiled, ran)
    (out / "summary.jsonl").write_text(summary.to_json() + "\n", encoding="utf-8")
    return [out / "candidates.jsonl", out / "summary.jsonl", *written]


def _survivors(candidates: list[CandidateTest], compiled: bool) -> dict[str, CandidateTest]:
    """First surviving candidate per request id."""
    keep = AT_LEAST_COMPILABLE if compiled else PARSED
    first: dict[str, CandidateTest] = {}
    for c in candidates:
        if c.status in keep and c.instance_id not in first:
            first[c.instance_id] = c
    return first


def _run_metrics(cfg: RunConfig, out: Path) -> list[Path]:
    eval_instances = read_dataset(stage_dir(cfg, "split") / "eval.txt")
    post = stage_dir(cfg, "postprocess")
    candidates = [candidate_from_record(r) for r in _read_jsonl(post / "candidates.jsonl")]
    summary = json.loads((post / "summary.jsonl").read_text(encoding="utf-8").splitlines()[0])
    responses = _read_jsonl(stage_dir(cfg, "generate") / "responses.jsonl")
    request_of = {iid: r["id"] for r in responses for iid in r["instances"]}
    survivors = _survivors(candidates, summary["compile_rate"] is not None)

    pairs, rows = [], []
    for inst in eval_instances:
        cand = survivors.get(request_of.get(inst.id, ""))
        reference = decode_flat(inst.output_encoded)
        pairs.append((cand.text if cand else "", reference))
        rows.append({"instance": inst.id, "candidate": cand.id if cand else None})
    scores = corpus_scores(pairs, cfg.metrics.codebleu, cfg.metrics.corpus_mode)
    for row, s in zip(rows, scores.pairs):
        row.update(bleu=s.bleu, codebleu=s.codebleu, components=list(s.components))

    metrics = {
        "project": cfg.project.name,
        "parse_rate": summary["parse_rate"],
        "parse_rate_repaired": summary["parse_rate_repaired"],
        "compile_rate": summary["compile_rate"],
        "bleu": scores.bleu if pairs else None,
        "codebleu": scores.codebleu if pairs else None,
        "corpus_mode": scores.mode,
        "n_instances": len(eval_instances),
        "n_with_candidate": sum(1 for r in rows if r["candidate"]),
        "line_coverage": None,
        "mutation_score": None,
        "adapted_mutation_score": None,
    }
    if cfg.adequacy.coverage_report is not None:
        lines = read_clover(cfg.adequacy.coverage_report, cfg.project.root)
        metrics["line_coverage"] = line_coverage(
            summary_from_clover(cfg.project.name, lines, cfg.project.source_root))
    if cfg.adequacy.kill_matrix is not None:
        ms, ams = mutation_scores(read_kill_matrix(cfg.adequacy.kill_matrix))
        metrics["mutation_score"], metrics["adapted_mutation_score"] = ms, ams
    out.mkdir(parents=True, exist_ok=True)
    _write_jsonl(out / "scores.jsonl", rows)
    _write_json(out / "metrics.json", metrics)
    return [out / "scores.jsonl", out / "metrics.json"]


def _run_report(cfg: RunConfig, out: Path) -> list[Path]:
    m = json.loads((stage_dir(cfg, "metrics") / "metrics.json").read_text(encoding="utf-8"))
    row = ProjectReport(
        project=m["project"],
        parse_rate=m["parse_rate"],
        compile_rate=m["compile_rate"],
        bleu=m["bleu"],
        codebleu=m["codebleu"],
        line_coverage=m["line_coverage"],
        mutation_score=m["mutation_score"],
        adapted_mutation_score=m["adapted_mutation_score"],
    )
    agg = aggregate_report([row])
    out.mkdir(parents=True, exist_ok=True)
    write_report_records([row], agg, out / "report.jsonl")
    (out / "table.txt").write_text(render_table([row], agg), encoding="utf-8")
    return [out / "report.jsonl", out / "table.txt"]


def _in(stage: str, *names: str):
    return lambda cfg: [stage_dir(cfg, stage) / n for n in names]


def _join(*fns):
    return lambda cfg: [p for f in fns for p in f(cfg)]


def _coverage_inputs(cfg: RunConfig) -> list[Path]:
    reports = sorted(p for p in cfg.project.coverage_dir.glob("coverage-*.xml"))
    return reports + _project_tests(cfg)


def _adequacy_inputs(cfg: RunConfig) -> list[Path]:
    return [p for p in (cfg.adequacy.coverage_report, cfg.adequacy.kill_matrix) if p is not None]


SPECS = {
    "extract": StageSpec("extract", _project_sources, ("project",), _run_extract),
    "coverage": StageSpec("coverage", _coverage_inputs, ("project",), _run_coverage),
    "dataset": StageSpec(
        "dataset",
        _join(_in("extract", "names_only.jsonl", "bodies.jsonl", "class_contexts.jsonl"),
              _in("coverage", "line2test.tsv", "tests.jsonl")),
        ("project", "match_mode"),
        _run_dataset,
    ),
    "split": StageSpec("split", _in("dataset", "all.txt", "all.txt.meta.jsonl"), ("ratio", "seed"), _run_split),
    "generate": StageSpec("generate", _in("split", "eval.txt", "eval.txt.meta.jsonl"), ("backend", "project"),
                          _run_generate),
    "postprocess": StageSpec(
        "postprocess",
        _join(_in("generate", "responses.jsonl"), _project_sources, _project_tests),
        ("postprocess",),
        _run_postprocess,
    ),
    "metrics": StageSpec(
        "metrics",
        _join(_in("split", "eval.txt", "eval.txt.meta.jsonl"),
              _in("generate", "responses.jsonl"),
              _in("postprocess", "candidates.jsonl", "summary.jsonl"),
              _adequacy_inputs),
        ("metrics", "adequacy"),
        _run_metrics,
    ),
    "report": StageSpec("report", _in("metrics", "metrics.json"), (), _run_report),
}


def _rel(cfg: RunConfig, p: Path) -> str:
    for base in (cfg.output_dir, cfg.project.root):
        try:
            return p.resolve().relative_to(base.resolve()).as_posix()
        except ValueError:
            continue
    return str(p)


@dataclass(frozen=True)
class StageResult:
    stage: str
    cache_hit: bool
    outputs: list[Path]
    seconds: float


def run_stage(cfg: RunConfig, stage: str) -> StageResult:
    spec = SPECS[stage]
    inputs = spec.inputs(cfg)
    missing = [p for p in inputs if not p.exists()]
    if missing:
        raise StageInputMissing(stage, missing)
    out = stage_dir(cfg, stage)
    manifest_path = out / "manifest.json"
    input_hashes = {_rel(cfg, p): sha256_file(p) for p in inputs}
    config_hash = cfg.section_hash(*spec.config_parts) if spec.config_parts else ""

    if manifest_path.exists():
        prior = json.loads(manifest_path.read_text(encoding="utf-8"))
        outputs_ok = all(
            (cfg.output_dir / rel).exists() and sha256_file(cfg.output_dir / rel) == h
            for rel, h in prior.get("outputs", {}).items()
        )
        if (prior.get("inputs") == input_hashes and prior.get("config_hash") == config_hash
                and prior.get("version") == __version__ and outputs_ok):
            prior["cache_hit"] = True
            prior["cache_hits"] = prior.get("cache_hits", 0) + 1
            _write_json(manifest_path, prior)
            log.info("stage %s: inputs unchanged, skipped", stage)
            return StageResult(stage, True, [cfg.output_dir / r for r in prior["outputs"]], 0.0)

    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        outputs = spec.run(cfg, out)
    except StageInputMissing:
        raise
    except Exception as exc:
        raise StageFailed(stage, exc) from exc
    seconds = time.perf_counter() - start
    _write_json(manifest_path, {
        "stage": stage,
        "version": __version__,
        "config_hash": config_hash,
        "inputs": input_hashes,
        "outputs": {_rel(cfg, p): sha256_file(p) for p in sorted(outputs)},
        "seconds": round(seconds, 3),
        "cache_hit": False,
    })
    log.info("stage %s: done in %.2fs", stage, seconds)
    return StageResult(stage, False, outputs, seconds)


def run_pipeline(cfg: RunConfig, stages=STAGES) -> list[StageResult]:
    """Run the requested stages in pipeline order."""
    unknown = [s for s in stages if s not in SPECS]
    if unknown:
        raise ValueError(f"unknown stage(s): {', '.join(unknown)}")
    wanted = set(stages)
    results = []
    for stage in STAGES:
        if stage in wanted:
            results.append(run_stage(cfg, stage))
    return results


def load_report(cfg: RunConfig) -> list[ProjectReport]:
    return read_report_records(stage_dir(cfg, "report") / "report.jsonl")
