import argparse
from typing import Optional

from pricing.oracle import LatticeConfig
from pricing.pipeline import hitting_checks, oracle_deltas, price_points, solve_report
from utils.logger import get_logger
from utils.run_config_schema import RunConfig
from utils.run_config_store import RunOutputs, read_run_config, write_outputs

logger = get_logger("solve")


def run(config: RunConfig, output_dir: Optional[str] = None, oracle: bool = False) -> RunOutputs:
    """Solve the boundaries, price the query points and write every output file."""
    report = solve_report(config.market, config.cap, config.settings)
    prices = price_points(report, config.points)
    deltas = []
    checks = []
    if oracle:
        if not prices:
            logger.warning("--oracle given but the config has no price points; nothing to compare")
        deltas = oracle_deltas(report, prices, LatticeConfig(n_steps=config.oracle.lattice_steps))
        checks = hitting_checks(
            report, prices, config.oracle.mc_paths, config.oracle.mc_steps, config.oracle.seed
        )
    return write_outputs(report, config, prices, deltas, checks, output_dir)


def _handle(args: argparse.Namespace) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["oracle.seed"] = args.seed
    config = read_run_config(args.config, overrides)
    outputs = run(config, args.out, args.oracle)
    for path in (outputs.boundaries, outputs.times, outputs.prices, outputs.diagnostics, outputs.derivatives):
        if path is not None:
            print(path)
    return 0


def setup(subparsers) -> None:
    parser = subparsers.add_parser("solve", help="solve the exercise boundaries and write the output files")
    parser.add_argument("--config", required=True, help="run configuration (key=value file)")
    parser.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    parser.add_argument("--seed", type=int, default=None, help="Monte Carlo seed (overrides oracle.seed)")
    parser.add_argument("--oracle", action="store_true", help="append lattice and Monte Carlo checks to diagnostics")
    parser.set_defaults(handler=_handle)
