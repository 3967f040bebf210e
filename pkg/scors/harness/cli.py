"""
Command line entry point.

    scors run <config> [--seed N] [--out DIR] [--experiment NAME]
    scors presets

Exit codes: 0 success, 1 validation failure, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

import structlog

from ..app_logging import configure_logging
from ..errors import ScorsNumericalError, ScorsValidationError
from .config import apply_overrides, load_config
from .experiments import EXPERIMENTS, run_experiment
from .presets import describe_presets

logger = structlog.get_logger("scors.cli")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scors",
        description="Run SCORS experiments and write CSV artifacts.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--log-level", default="INFO", help="log level (default: INFO)")
    renderer = parser.add_mutually_exclusive_group()
    renderer.add_argument("--log-json", dest="log_json", action="store_true", help="JSON log lines")
    renderer.add_argument("--log-console", dest="log_json", action="store_false", help="console log lines (default)")
    parser.set_defaults(log_json=False)

    commands = parser.add_subparsers(dest="command", required=True)
    run = commands.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("config", help="path to a key = value config file")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out", default=None, help="override the output directory")
    run.add_argument("--experiment", choices=sorted(EXPERIMENTS), default=None, help="override the experiment kind")

    commands.add_parser("presets", help="list the named presets")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, json=args.log_json)

    if args.command == "presets":
        print(describe_presets())
        return EXIT_OK

    try:
        config = apply_overrides(load_config(args.config), seed=args.seed, out=args.out, experiment=args.experiment)
        artifacts = run_experiment(config)
    except ScorsValidationError as e:
        logger.error("validation_failed", error=str(e), error_type=type(e).__name__)
        return EXIT_VALIDATION
    except ScorsNumericalError as e:
        logger.error("numerical_failure", error=str(e), error_type=type(e).__name__)
        return EXIT_NUMERICAL

    print(artifacts.output_dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
