"""
Laakso Lab - Command Line Entry Point

    lab run <config.json> [--output DIR]
    lab verify [--depth K] [--seed S] [--fault chord] [--output DIR]
    lab schema
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from laakso_lab.core.config import settings
from laakso_lab.core.errors import ErrorHandler, ExitCode
from laakso_lab.core.logging import configure_logging

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lab",
        description=f"{settings.APP_NAME} {settings.APP_VERSION}: Laakso spaces, shortcut metrics and Lipschitz maps",
    )
    parser.add_argument("--log-level", default=None, help="Override LAB_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run one experiment from a JSON config")
    run.add_argument("config", type=Path)
    run.add_argument("--output", type=Path, default=None, help="Run directory (default: below LAB_OUTPUT_ROOT)")

    verify = commands.add_parser("verify", help="Run the invariant verification suite")
    verify.add_argument("--depth", type=int, default=settings.VERIFY_DEPTH)
    verify.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    verify.add_argument("--fault", choices=["chord"], default=None, help="Inject a known fault")
    verify.add_argument("--output", type=Path, default=None, help="Directory for verify.json")

    commands.add_parser("schema", help="Print the experiment config JSON schema")
    return parser


def _run(args: argparse.Namespace) -> int:
    from laakso_lab import experiments

    directory = experiments.run_file(args.config, args.output)
    print(directory)
    return ExitCode.OK


def _verify(args: argparse.Namespace) -> int:
    from laakso_lab.verify_suite import verify_all

    if args.depth < 1:
        print("--depth must be at least 1", file=sys.stderr)
        return ExitCode.PARAMETER
    summary = verify_all(args.depth, args.seed, args.fault, args.output)
    return ExitCode.OK if summary.failed == 0 else ExitCode.INVARIANT


def _schema(args: argparse.Namespace) -> int:
    from laakso_lab.schemas.experiment import ExperimentConfig

    print(json.dumps(ExperimentConfig.model_json_schema(), indent=2, sort_keys=True))
    return ExitCode.OK


COMMANDS = {"run": _run, "verify": _verify, "schema": _schema}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level.upper() if args.log_level else settings.LOG_LEVEL, settings.LOG_FORMAT)
    try:
        if args.command != "schema":
            settings.ensure_directories()
        return int(COMMANDS[args.command](args))
    except Exception as e:
        code = ErrorHandler.exit_code_for(e)
        if code == ExitCode.INTERNAL:
            logger.exception(f"Unexpected error in '{args.command}'")
        print(ErrorHandler.describe(e), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
