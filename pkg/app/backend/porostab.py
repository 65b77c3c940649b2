import argparse
import logging
import sys
from typing import List, Optional

from rich.logging import RichHandler

from load_env import load_env
from porostablib.benchmarks import BENCHMARKS
from porostablib.config import (
    RunConfig,
    apply_overrides,
    config_from_benchmark,
    parse_config,
    resolve_output_dir,
)
from porostablib.errors import PorostabError
from porostablib.strategy import STRATEGIES, Strategy

logger = logging.getLogger("porostab")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_UNEXPECTED = 2


def setup_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="porostab",
        description="Simulate and analyze stabilized Q1-P0 poromechanics benchmarks: time marching, Schur complement spectra and stabilization sweeps.",
    )
    parser.add_argument("command", choices=sorted(STRATEGIES), help="What to run")
    parser.add_argument("--config", help="YAML run configuration")
    parser.add_argument(
        "--benchmark", choices=BENCHMARKS, help="Run a benchmark with default settings instead of a configuration file"
    )
    parser.add_argument("--out", help="Output directory (overrides the configuration and POROSTAB_OUTPUT_DIR)")
    parser.add_argument("--c", type=float, help="Stabilization ratio c = tau / tau*")
    parser.add_argument("--mesh-n", type=int, dest="mesh_n", help="Cells per axis")
    parser.add_argument("--verbose", "-v", action="store_true", help="Verbose output")
    return parser


def setup_config(args: argparse.Namespace) -> RunConfig:
    if args.config:
        config = parse_config(args.config)
    else:
        config = config_from_benchmark(args.benchmark)
    return apply_overrides(config, c=args.c, mesh_n=args.mesh_n, out=args.out)


def setup_strategy(command: str, config: RunConfig) -> Strategy:
    output_dir = resolve_output_dir(config)
    logger.info("Writing %s results for '%s' to %s", command, config.benchmark, output_dir)
    return STRATEGIES[command](config, output_dir)


def main(argv: Optional[List[str]] = None) -> int:
    parser = setup_parser()
    args = parser.parse_args(argv)
    if not args.config and not args.benchmark:
        parser.error("one of --config or --benchmark is required")
    if args.config and args.benchmark:
        parser.error("--config and --benchmark are mutually exclusive")

    if args.verbose:
        logging.basicConfig(format="%(message)s", datefmt="[%X]", handlers=[RichHandler(rich_tracebacks=True)])
        # Only our logger goes to DEBUG, scipy and friends stay quiet
        logger.setLevel(logging.DEBUG)

    load_env()

    try:
        strategy = setup_strategy(args.command, setup_config(args))
        strategy.execute()
    except PorostabError as e:
        logger.error("porostab %s failed: %s", args.command, e)
        return EXIT_FAILURE
    except Exception:
        logger.exception("porostab %s failed unexpectedly", args.command)
        return EXIT_UNEXPECTED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
