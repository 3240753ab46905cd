import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from pricing.model import Continuity, MarketParams, TwoLevelCap  # noqa: E402
from pricing.pipeline import SolverSettings, solve_report  # noqa: E402

# Coarse grids keep the default run quick; the slow tests use the production grids.
FAST = SolverSettings(uncapped_steps=120, two_level_steps=60, single_cap_steps=60)

EXAMPLE_1 = (MarketParams(r=0.1, delta=0.1, sigma=0.3, K=1.0), TwoLevelCap(L1=1.3, L2=1.39, T1=3.0, T2=4.0))
NON_MONOTONE = (MarketParams(r=0.05, delta=0.05, sigma=0.5, K=1.0), TwoLevelCap(L1=1.28, L2=1.3, T1=1.0, T2=2.0))
CASE_II = (MarketParams(r=0.03, delta=0.05, sigma=0.25, K=1.0), TwoLevelCap(L1=1.46, L2=1.5, T1=3.0, T2=4.0))
DECREASING = (
    MarketParams(r=0.03, delta=0.05, sigma=0.25, K=1.0),
    TwoLevelCap(L1=1.45, L2=1.3, T1=1.0, T2=2.0, continuity=Continuity.LEFT),
)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the full-grid acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-grid acceptance runs (enable with --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def example1():
    return EXAMPLE_1


@pytest.fixture(scope="session")
def case_ii():
    return CASE_II


@pytest.fixture(scope="session")
def decreasing():
    return DECREASING


@pytest.fixture(scope="session")
def example1_report():
    params, cap = EXAMPLE_1
    return solve_report(params, cap, FAST)


@pytest.fixture(scope="session")
def case_ii_report():
    params, cap = CASE_II
    return solve_report(params, cap, FAST)


@pytest.fixture(scope="session")
def decreasing_report():
    params, cap = DECREASING
    return solve_report(params, cap, FAST)
