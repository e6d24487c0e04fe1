"""Main entry point for the magnetic plasma control solver."""

import argparse
import sys
import time
from pathlib import Path
from typing import List, Optional

from src.cli import (
    ScenarioError,
    cmd_backward,
    cmd_fixedpoint,
    cmd_forward,
    cmd_gradcheck,
    cmd_optimize,
    cmd_picard_study,
    dry_run,
    load_scenario,
)
from src.config import (
    DEFAULT_SAMPLE_SPACING,
    DEFAULT_THREADS,
    EXIT_INVALID_SCENARIO,
    EXIT_UNEXPECTED,
    LOG_LEVEL,
    OUTPUT_DIR,
)
from src.kernels.pairwise import set_worker_count
from src.logger import get_logger, set_console_level

logger = get_logger()

COMMANDS = {
    "forward": cmd_forward,
    "backward": cmd_backward,
    "gradcheck": cmd_gradcheck,
    "optimize": cmd_optimize,
    "fixedpoint": cmd_fixedpoint,
    "picard-study": cmd_picard_study,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--scenario",
        type=Path,
        default=None,
        help=(
            "Scenario JSON file (default: built-in default scenario, whose lattice "
            f"spacing run.sample_spacing is {DEFAULT_SAMPLE_SPACING} rather than 0.25 "
            "to keep the particle count desk-sized)"
        ),
    )
    common.add_argument(
        "--out",
        type=Path,
        default=None,
        help=f"Output directory (default: {OUTPUT_DIR}/<command>_<timestamp>)",
    )
    common.add_argument(
        "--threads",
        type=int,
        default=DEFAULT_THREADS,
        help=f"Worker threads for kernel sums (default: {DEFAULT_THREADS})",
    )
    common.add_argument(
        "--dry-run",
        action="store_true",
        help="Validate the scenario and print derived quantities without running",
    )
    common.add_argument(
        "--seed",
        type=int,
        default=0,
        help="Seed of the random gradient-check directions (default: 0)",
    )
    common.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default=LOG_LEVEL,
        help=f"Console log level; the log file always records DEBUG (default: {LOG_LEVEL})",
    )

    parser = argparse.ArgumentParser(
        description="Optimal magnetic control of a Vlasov-Poisson plasma"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        subparsers.add_parser(name, parents=[common])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return its exit code.

    Args:
        argv: Command line arguments, defaults to sys.argv

    Returns:
        0 on success, a distinct nonzero code per failure kind
    """
    args = build_parser().parse_args(argv)
    set_console_level(args.log_level)
    try:
        set_worker_count(args.threads)
        scenario = load_scenario(args.scenario, mode=args.command)
        if args.dry_run:
            return dry_run(scenario)

        # Timestamped output directory, as for every run artifact
        out = args.out
        if out is None:
            timestamp = time.strftime("%Y%m%d_%H%M%S")
            out = OUTPUT_DIR / f"{args.command.replace('-', '_')}_{timestamp}"
        out.mkdir(parents=True, exist_ok=True)

        command = COMMANDS[args.command]
        if args.command == "gradcheck":
            return command(scenario, out, args.threads, seed=args.seed)
        return command(scenario, out, args.threads)

    except ScenarioError as e:
        logger.error(f"Invalid scenario: {str(e)}")
        return EXIT_INVALID_SCENARIO
    except ValueError as e:
        logger.error(f"Invalid argument: {str(e)}", exc_info=True)
        return EXIT_INVALID_SCENARIO
    except Exception as e:
        logger.error(f"An error occurred in the main process: {str(e)}", exc_info=True)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
