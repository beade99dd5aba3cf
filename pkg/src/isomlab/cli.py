#!/usr/bin/env python3
"""
isomlab CLI - scenario-driven front end for the isomonodromy library.

Every analysis command reads a JSON scenario and writes report.json, report.txt and
CSV tables into the output directory. The `fixture` command writes a seeded random
connection file.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from isomlab.fixtures import PROFILES, write_fixture
from isomlab.runner import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, run_scenario
from isomlab.scenario import COMMANDS, ScenarioError, apply_overrides, load_scenario
from isomlab_utils.logging_config import get_logger, set_log_level
from isomonodromy.errors import IsomonodromyError

logger = get_logger("isomlab.cli")

COMMAND_HELP = {
    "validate": "Check the invariants of a connection",
    "monodromy": "Compute monodromy matrices, normalized logarithms and exponents",
    "deform": "Integrate the isomonodromic deformation along a pole path",
    "theta-scan": "Count and locate zeros of the tau function u1 on a disc",
    "pole-fit": "Fit blow-up exponents of the recovered family at Theta zeros",
    "make-aux": "Gauge a trivial system to the auxiliary normalization",
}


def _add_common_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", "-c", type=str, required=True, help="Scenario JSON file")
    parser.add_argument("--out", "-o", type=str, default=None, help="Output directory")
    parser.add_argument("--jobs", "-j", type=int, default=None, help="Worker cap")
    parser.add_argument("--seed", type=int, default=None, help="Seed for fixture requests")
    parser.add_argument(
        "--log-level", type=str, default=None, help="DEBUG, INFO, WARNING or ERROR"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isomlab",
        description="isomlab - numerical isomonodromic deformations of 2x2 connections",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  isomlab validate --config configs/validate_fuchsian.json
  isomlab deform --config configs/deform_fuchsian.json --out out/deform
  isomlab theta-scan --config configs/theta_scan_m1n4.json --jobs 4
  isomlab fixture --kind irregular-m2n2 --seed 1 --out fixtures/m2n2.json
        """,
    )
    subparsers = parser.add_subparsers(dest="command", help="Available commands")
    for command in COMMANDS:
        _add_common_args(subparsers.add_parser(command, help=COMMAND_HELP[command]))

    fixture_parser = subparsers.add_parser("fixture", help="Write a seeded random connection")
    fixture_parser.add_argument("--kind", type=str, required=True, choices=sorted(PROFILES))
    fixture_parser.add_argument("--seed", type=int, required=True, help="RNG seed")
    fixture_parser.add_argument("--out", "-o", type=str, required=True, help="Output JSON file")
    fixture_parser.add_argument("--log-level", type=str, default=None)
    return parser


def validate_args(args: argparse.Namespace) -> None:
    """
    Validate parsed arguments.

    Raises:
        ValueError: If arguments are invalid
    """
    if args.command is None:
        raise ValueError("a command is required")
    if getattr(args, "jobs", None) is not None and args.jobs <= 0:
        raise ValueError("jobs must be positive")
    if getattr(args, "seed", None) is not None and args.seed < 0:
        raise ValueError("seed must be non-negative")
    if args.log_level is not None and args.log_level.upper() not in logging.getLevelNamesMapping():
        raise ValueError(f"Unsupported log level: {args.log_level}")
    config = getattr(args, "config", None)
    if config is not None and not Path(config).is_file():
        raise ValueError(f"config file {config} does not exist")


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    args = build_parser().parse_args(argv)
    validate_args(args)
    return args


def fixture_command(args: argparse.Namespace) -> int:
    try:
        path = write_fixture(args.kind, args.seed, args.out)
    except IsomonodromyError as e:
        logger.error(f"fixture generation failed: {e}")
        return EXIT_NUMERICAL
    logger.info(f"wrote {args.kind} fixture (seed {args.seed}) to {path}")
    return EXIT_OK


def scenario_command(args: argparse.Namespace) -> int:
    config = Path(args.config)
    try:
        scenario = load_scenario(config)
        if scenario.command != args.command:
            raise ScenarioError(
                f"command: scenario is for {scenario.command!r}, invoked as {args.command!r}"
            )
        scenario = apply_overrides(scenario, output_dir=args.out, jobs=args.jobs, seed=args.seed)
        # --out is relative to the working directory, the file's paths to the file
        base_dir = config.resolve().parent
        if args.out is not None:
            scenario = scenario.model_copy(update={"output_dir": str(Path(args.out).resolve())})
        outcome = run_scenario(scenario, base_dir=base_dir)
    except ScenarioError as e:
        logger.error(str(e))
        return EXIT_CONFIG
    return outcome.exit_code


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point."""
    try:
        args = parse_args(argv)
    except ValueError as e:
        logger.error(str(e))
        return EXIT_CONFIG
    if args.log_level is not None:
        set_log_level(args.log_level.upper())
    if args.command == "fixture":
        return fixture_command(args)
    return scenario_command(args)


if __name__ == "__main__":
    sys.exit(main())
