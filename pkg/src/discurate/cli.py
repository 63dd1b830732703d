"""Command-line entry points.

``discurate run`` executes pipeline stages from a YAML config;
``discurate eval`` scores a predictions file against a generated
dataset; ``discurate fixture`` materializes the bundled two-scene
example for a self-contained quickstart.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .evaluation import format_report, score_dataset
from .fixture import write_fixture
from .pipeline import StageError, run
from .scene import ManifestError
from .util import atomic_write_text, load_jsonl


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="discurate",
        description="Deterministic 3D scene curation and QA generation.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run pipeline stages")
    run_p.add_argument("--config", required=True, type=Path,
                       help="YAML pipeline configuration")
    run_p.add_argument("--stages", default=None,
                       help="comma-separated subset of "
                            "clean,annotate,graph,refer,generate")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")

    eval_p = sub.add_parser("eval", help="score predictions")
    eval_p.add_argument("--dataset", required=True, type=Path,
                        help="dataset JSONL produced by the generate stage")
    eval_p.add_argument("--predictions", required=True, type=Path,
                        help="JSONL lines of {sample_id, text}")
    eval_p.add_argument("--json", type=Path, default=None,
                        help="also write the report as JSON to this path")

    fixture_p = sub.add_parser("fixture",
                               help="write the bundled example scenes")
    fixture_p.add_argument("--out", required=True, type=Path,
                           help="directory to create the fixture in")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    stages = None
    if args.stages is not None:
        stages = tuple(s.strip() for s in args.stages.split(",")
                       if s.strip())
    try:
        config = load_config(args.config, seed=args.seed, stages=stages)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        report = run(config)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for stage in report.stages:
        status = "cached" if stage.skipped else "ran"
        print(f"{stage.name}: {status}")
    print(f"artifacts in {config.output_dir}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    try:
        samples = load_jsonl(args.dataset.read_text(encoding="utf-8"))
        predictions = load_jsonl(
            args.predictions.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report = score_dataset(samples, predictions)
    print(format_report(report))
    if args.json is not None:
        atomic_write_text(args.json,
                          json.dumps(report, indent=1, sort_keys=True)
                          + "\n")
    return 0


def _cmd_fixture(args: argparse.Namespace) -> int:
    try:
        manifest_path, config_path = write_fixture(args.out)
    except (ManifestError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"manifest: {manifest_path}")
    print(f"config: {config_path}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "eval":
        return _cmd_eval(args)
    return _cmd_fixture(args)


if __name__ == "__main__":
    sys.exit(main())
