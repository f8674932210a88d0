"""Run configuration: one INI file, validated up front.

Relative paths resolve against the directory holding the config file.
Adapter command templates may use ``{config_dir}``, substituted here;
``{project_dir}`` and ``{test_file}`` are left for the adapter runner.
Secrets never live in the file: the http backend reads its token from the
environment variable named by ``backend.token_env``.

Example::

    [project]
    name = toy
    root = toy_project
    coverage_dir = toy_project/coverage

    [split]
    ratio = 0.2
    seed = 7

    [backend]
    kind = stub

    [postprocess]
    compile_adapter = sh {config_dir}/adapters/compile.sh {project_dir} {test_file}
"""

from __future__ import annotations

import configparser
import hashlib
import json
import re
import shlex
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

from .coverage_map import DEFAULT_TEST_ROOT
from .generation import BackendConfig
from .metrics import BleuConfig, CodeBleuConfig
from .source_model import DEFAULT_SOURCE_GLOB

DEFAULT_TEST_GLOB = "src/test/java/**/*.java"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProjectConfig:
    name: str
    root: Path
    coverage_dir: Path
    source_glob: str = DEFAULT_SOURCE_GLOB
    test_glob: str = DEFAULT_TEST_GLOB
    test_root: str = DEFAULT_TEST_ROOT
    source_root: str = "src/main/java"


@dataclass(frozen=True)
class PostprocessConfig:
    compile_adapter: str = ""
    run_adapter: str = ""
    adapter_timeout: float = 300.0
    max_extra_brackets: int = 8
    compile_denominator: str = "all"


@dataclass(frozen=True)
class MetricsConfig:
    codebleu: CodeBleuConfig = field(default_factory=CodeBleuConfig)
    corpus_mode: str = "sentence"


@dataclass(frozen=True)
class AdequacyConfig:
    coverage_report: Path | None = None
    kill_matrix: Path | None = None


@dataclass(frozen=True)
class RunConfig:
    project: ProjectConfig
    output_dir: Path
    ratio: float
    seed: int
    backend: BackendConfig
    postprocess: PostprocessConfig
    metrics: MetricsConfig
    adequacy: AdequacyConfig
    match_mode: str = "token"
    workers: int = 1
    source: Path | None = None

    def with_overrides(self, *, seed: int | None = None, output_dir: str | Path | None = None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        if output_dir is not None:
            cfg = replace(cfg, output_dir=Path(output_dir).resolve())
        return cfg

    def section_hash(self, *names: str) -> str:
        """Digest of the named parts of the config, for stage cache keys."""
        parts = {n: _jsonable(getattr(self, n)) for n in names}
        blob = json.dumps(parts, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(value: Any) -> Any:
    if hasattr(value, "__dataclass_fields__"):
        return _jsonable(asdict(value))
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (frozenset, set)):
        return sorted(_jsonable(v) for v in value)
    if isinstance(value, Path):
        return str(value)
    return value


def _get(cp: configparser.ConfigParser, section: str, key: str, default: Any = None) -> Any:
    if cp.has_option(section, key):
        raw = cp.get(section, key).strip()
        return raw if raw != "" else default
    return default


def _num(cp, section, key, default, kind=float):
    raw = _get(cp, section, key)
    if raw is None:
        return default
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}") from None


def _path(base: Path, raw: str | None) -> Path | None:
    if raw is None:
        return None
    p = Path(raw).expanduser()
    return (p if p.is_absolute() else base / p).resolve()


def _template(raw: str, base: Path) -> str:
    return re.sub(r"\{config_dir\}", lambda m: shlex.quote(str(base)), raw)


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a run config; raises :class:`ConfigError`."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.resolve().parent

    name = _get(cp, "project", "name")
    root = _path(base, _get(cp, "project", "root"))
    if root is None:
        raise ConfigError("[project] root is required")
    if not root.is_dir():
        raise ConfigError(f"[project] root does not exist: {root}")
    coverage_dir = _path(base, _get(cp, "project", "coverage_dir")) or root / "coverage"
    if not coverage_dir.is_dir():
        raise ConfigError(f"[project] coverage_dir does not exist: {coverage_dir}")
    project = ProjectConfig(
        name=name or root.name,
        root=root,
        coverage_dir=coverage_dir,
        source_glob=_get(cp, "project", "source_glob", DEFAULT_SOURCE_GLOB),
        test_glob=_get(cp, "project", "test_glob", DEFAULT_TEST_GLOB),
        test_root=_get(cp, "project", "test_root", DEFAULT_TEST_ROOT),
        source_root=_get(cp, "project", "source_root", "src/main/java"),
    )

    ratio = _num(cp, "split", "ratio", 0.2)
    if not 0 < ratio < 1:
        raise ConfigError(f"[split] ratio must be in (0, 1), got {ratio}")
    seed = _num(cp, "split", "seed", None, int)
    if seed is None:
        raise ConfigError("[split] seed is required")

    params = {}
    if cp.has_section("backend"):
        for key, raw in cp.items("backend"):
            if key.startswith("param."):
                try:
                    params[key[6:]] = json.loads(raw)
                except json.JSONDecodeError:
                    params[key[6:]] = raw
    try:
        backend = BackendConfig(
            kind=_get(cp, "backend", "kind", "stub"),
            endpoint=_get(cp, "backend", "endpoint", ""),
            command=_template(_get(cp, "backend", "command", ""), base),
            timeout=_num(cp, "backend", "timeout", 60.0),
            max_output_tokens=_num(cp, "backend", "max_output_tokens", 256, int),
            retries=_num(cp, "backend", "retries", 2, int),
            backoff=_num(cp, "backend", "backoff", 0.5),
            rate=_num(cp, "backend", "rate", None),
            token_env=_get(cp, "backend", "token_env", "TESTGEN_API_TOKEN"),
            concurrency=_num(cp, "backend", "concurrency", 1, int),
            mode=_get(cp, "backend", "mode", ""),
            params=params,
        )
    except ValueError as exc:
        raise ConfigError(f"[backend] {exc}") from None
    if backend.kind == "http" and not backend.endpoint:
        raise ConfigError("[backend] endpoint is required for the http backend")
    if backend.kind == "command" and not backend.command:
        raise ConfigError("[backend] command is required for the command backend")

    post = PostprocessConfig(
        compile_adapter=_template(_get(cp, "postprocess", "compile_adapter", ""), base),
        run_adapter=_template(_get(cp, "postprocess", "run_adapter", ""), base),
        adapter_timeout=_num(cp, "postprocess", "adapter_timeout", 300.0),
        max_extra_brackets=_num(cp, "postprocess", "max_extra_brackets", 8, int),
        compile_denominator=_get(cp, "postprocess", "compile_denominator", "all"),
    )
    if post.adapter_timeout <= 0:
        raise ConfigError("[postprocess] adapter_timeout must be positive")
    if post.compile_denominator not in ("all", "parsable"):
        raise ConfigError("[postprocess] compile_denominator must be 'all' or 'parsable'")

    weights_raw = _get(cp, "metrics", "weights")
    try:
        weights = tuple(float(w) for w in weights_raw.split(",")) if weights_raw else (0.25,) * 4
        codebleu_cfg = CodeBleuConfig(
            weights=weights,
            keyword_weight=_num(cp, "metrics", "keyword_weight", 4.0),
            bleu=BleuConfig(
                max_n=_num(cp, "metrics", "max_n", 4, int),
                smoothing=_get(cp, "metrics", "smoothing", "add-one"),
            ),
        )
    except ValueError as exc:
        raise ConfigError(f"[metrics] {exc}") from None
    corpus_mode = _get(cp, "metrics", "corpus_mode", "sentence")
    if corpus_mode not in ("sentence", "pooled"):
        raise ConfigError(f"[metrics] corpus_mode must be 'sentence' or 'pooled', got {corpus_mode!r}")

    adequacy = AdequacyConfig(
        coverage_report=_path(base, _get(cp, "adequacy", "coverage_report")),
        kill_matrix=_path(base, _get(cp, "adequacy", "kill_matrix")),
    )
    for label, p in (("coverage_report", adequacy.coverage_report), ("kill_matrix", adequacy.kill_matrix)):
        if p is not None and not p.is_file():
            raise ConfigError(f"[adequacy] {label} does not exist: {p}")

    match_mode = _get(cp, "dataset", "match_mode", "token")
    if match_mode not in ("token", "substring"):
        raise ConfigError(f"[dataset] match_mode must be 'token' or 'substring', got {match_mode!r}")

    output_dir = _path(base, _get(cp, "output", "dir", "run"))
    return RunConfig(
        project=project,
        output_dir=output_dir,
        ratio=ratio,
        seed=seed,
        backend=backend,
        postprocess=post,
        metrics=MetricsConfig(codebleu_cfg, corpus_mode),
        adequacy=adequacy,
        match_mode=match_mode,
        workers=_num(cp, "run", "workers", 1, int),
        source=path.resolve(),
    )
