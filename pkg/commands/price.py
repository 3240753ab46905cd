import argparse

from pricing.oracle import LatticeConfig, lattice_price
from pricing.pipeline import price_points, solve_report
from utils.logger import get_logger
from utils.run_config_schema import RunConfig, RunConfigValidationError
from utils.run_config_store import read_run_config

logger = get_logger("price")


def price(config: RunConfig, S: float, t: float, method: str = "eep") -> float:
    if S <= 0:
        raise RunConfigValidationError("--s must be positive")
    if not 0 <= t <= config.cap.T2:
        raise RunConfigValidationError(f"--t must lie in [0, {config.cap.T2}]")
    if method == "lattice":
        return lattice_price(S, t, config.market, config.cap, LatticeConfig(n_steps=config.oracle.lattice_steps))
    report = solve_report(config.market, config.cap, config.settings)
    return price_points(report, [(S, t)])[0].price


def _handle(args: argparse.Namespace) -> int:
    config = read_run_config(args.config)
    value = price(config, args.s, args.t, args.method)
    logger.info("price(S=%s, t=%s) via %s = %.12g", args.s, args.t, args.method, value)
    print(format(value, ".10g"))
    return 0


def setup(subparsers) -> None:
    parser = subparsers.add_parser("price", help="print the option price at one (S, t)")
    parser.add_argument("--config", required=True, help="run configuration (key=value file)")
    parser.add_argument("--s", type=float, required=True, help="underlying price")
    parser.add_argument("--t", type=float, required=True, help="time in years")
    parser.add_argument("--method", choices=("eep", "lattice"), default="eep")
    parser.set_defaults(handler=_handle)
