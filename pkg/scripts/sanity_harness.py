import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from pricing.analytic import discounted_hit_before, european_call, european_capped_call
from pricing.model import MarketParams, TimeGrid, TwoLevelCap
from pricing.oracle import LatticeConfig, lattice_price
from pricing.uncapped import solve_uncapped_boundary
from utils.run_config_schema import build_run_config
from utils.run_config_store import parse_run_config

PARAMS = MarketParams(r=0.1, delta=0.1, sigma=0.3, K=1.0)
CAP = TwoLevelCap(L1=1.3, L2=1.39, T1=3.0, T2=4.0)


def test_capped_call_parity() -> None:
    capped = european_capped_call(1.2, 0.0, 1.39, 1.0, PARAMS)
    spread = european_call(1.2, 0.0, 1.0, 1.0, PARAMS) - european_call(1.2, 0.0, 1.39, 1.0, PARAMS)
    assert math.isclose(capped, spread, abs_tol=1e-12)


def test_hit_at_barrier() -> None:
    assert float(discounted_hit_before(1.39, 1.39, 0.0, 1.0, PARAMS)) == 1.0


def test_small_uncapped_solve() -> None:
    solution = solve_uncapped_boundary(PARAMS, TimeGrid(0.0, 4.0, 40))
    values = solution.boundary.values
    assert values[-1] == 1.0
    assert all(a >= b for a, b in zip(values[:-1], values[1:]))


def test_lattice_dominates_payoff() -> None:
    price = lattice_price(1.35, 0.0, PARAMS, CAP, LatticeConfig(n_steps=200))
    assert price >= CAP.L1 - PARAMS.K


def test_parse_run_config() -> None:
    raw = "market.r=0.1\nmarket.delta=0.1\nmarket.sigma=0.3\ncap.L1=1.3\ncap.L2=1.39\ncap.T1=3\ncap.T2=4\n"
    config = build_run_config(parse_run_config(raw))
    assert config.cap == CAP


def main() -> None:
    test_capped_call_parity()
    test_hit_at_barrier()
    test_small_uncapped_solve()
    test_lattice_dominates_payoff()
    test_parse_run_config()
    print("Sanity harness passed")


if __name__ == "__main__":
    main()
