import argparse
import sys
from typing import Optional, Sequence

from commands import price, solve
from pricing.model import ParameterError, UnsupportedRegimeError
from pricing.numerics import QuadratureError, SolverError
from pricing.oracle import LatticeError
from utils.config import VERSION
from utils.logger import get_logger, init_cli_logging
from utils.run_config_schema import RunConfigValidationError

logger = get_logger("capstop")

EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capstop", description="American calls with a two-level cap")
    parser.add_argument("--version", action="version", version=f"capstop {VERSION}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO logs, -vv for DEBUG")
    subparsers = parser.add_subparsers(dest="command", required=True)
    solve.setup(subparsers)
    price.setup(subparsers)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    init_cli_logging(args.verbose)
    try:
        return args.handler(args)
    except (RunConfigValidationError, ParameterError, UnsupportedRegimeError) as exc:
        logger.error("Configuration error: %s", exc)
        return EXIT_CONFIG
    except (SolverError, QuadratureError, LatticeError) as exc:
        logger.error("Solver error: %s", exc)
        return EXIT_SOLVER
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
