"""Command-line entry point.

    testgen-da run --config run.ini [--stages extract,coverage] [--output DIR] [--seed N]
    testgen-da <stage> --config run.ini [--output DIR] [--seed N]

Exit status: 0 success, 1 config error, 2 stage failure, 3 adapter failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .config import ConfigError, load_config
from .pipeline import STAGES, StageFailed, StageInputMissing, run_pipeline, stage_dir
from .post_processor import AdapterTimeout, PrecheckFailed

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_STAGE = 2
EXIT_ADAPTER = 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="run config (INI)")
    p.add_argument("--output", help="run directory; overrides [output] dir")
    p.add_argument("--seed", type=int, help="split seed; overrides [split] seed")
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="testgen-da", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run several stages in pipeline order")
    _common(run)
    run.add_argument("--stages", default=",".join(STAGES),
                     help=f"comma-separated subset of {','.join(STAGES)} (default: all)")
    for stage in STAGES:
        _common(sub.add_parser(stage, help=f"run the {stage} stage only"))
    return parser


def _parse_stages(raw: str) -> list[str]:
    stages = [s.strip() for s in raw.split(",") if s.strip()]
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise ConfigError(f"unknown stage(s): {', '.join(unknown)}")
    return stages


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, output_dir=args.output)
        stages = _parse_stages(args.stages) if args.command == "run" else [args.command]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        results = run_pipeline(cfg, stages)
    except StageInputMissing as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except StageFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.cause, (AdapterTimeout, PrecheckFailed)):
            return EXIT_ADAPTER
        return EXIT_STAGE

    for r in results:
        note = "cached" if r.cache_hit else f"{r.seconds:.2f}s"
        print(f"{r.stage:<12} {note:>8}  {stage_dir(cfg, r.stage)}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
