import math

import numpy as np
import pytest

from pricing.model import (
    Boundary,
    CaseLabel,
    Continuity,
    MarketParams,
    ParameterError,
    TimeGrid,
    TwoLevelCap,
    UnsupportedRegimeError,
    classify_case,
    t_zero,
)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(r=0.0, delta=0.1, sigma=0.3, K=1.0),
        dict(r=0.1, delta=-0.1, sigma=0.3, K=1.0),
        dict(r=0.1, delta=0.1, sigma=0.0, K=1.0),
        dict(r=0.1, delta=0.1, sigma=0.3, K=0.0),
        dict(r=math.nan, delta=0.1, sigma=0.3, K=1.0),
    ],
)
def test_market_params_rejects_bad_values(kwargs):
    with pytest.raises(ParameterError):
        MarketParams(**kwargs)


def test_market_params_drift_and_threshold():
    params = MarketParams(r=0.03, delta=0.05, sigma=0.25, K=1.0)
    assert params.mu == pytest.approx(0.03 - 0.05 - 0.5 * 0.0625)
    assert params.dividend_threshold == pytest.approx(0.6)
    assert MarketParams(r=0.05, delta=0.0, sigma=0.2, K=1.0).dividend_threshold == math.inf


def test_cap_dates_must_be_ordered():
    with pytest.raises(ParameterError):
        TwoLevelCap(L1=1.3, L2=1.4, T1=2.0, T2=2.0)
    with pytest.raises(ParameterError):
        TwoLevelCap(L1=1.3, L2=1.4, T1=0.0, T2=2.0)


def test_cap_levels_must_exceed_strike():
    cap = TwoLevelCap(L1=0.9, L2=1.4, T1=1.0, T2=2.0)
    with pytest.raises(ParameterError):
        cap.check_against(MarketParams(r=0.1, delta=0.1, sigma=0.3, K=1.0))


def test_level_at_follows_continuity_convention():
    right = TwoLevelCap(L1=1.45, L2=1.3, T1=1.0, T2=2.0)
    left = TwoLevelCap(L1=1.45, L2=1.3, T1=1.0, T2=2.0, continuity="left")
    assert left.continuity is Continuity.LEFT
    assert right.level_at(0.5) == left.level_at(0.5) == 1.45
    assert right.level_at(1.5) == left.level_at(1.5) == 1.3
    assert right.level_at(1.0) == 1.3
    assert left.level_at(1.0) == 1.45


def test_time_grid_nodes_and_lookup():
    grid = TimeGrid(0.0, 3.0, 60)
    assert grid.nodes[0] == 0.0 and grid.nodes[-1] == 3.0
    assert grid.h == pytest.approx(0.05)
    assert grid.node_index(1.5) == 30
    assert grid.node_index(1.52) is None
    after = grid.nodes_after(1.52)
    assert after[0] == 1.52 and after[1] == pytest.approx(1.55)


def test_time_grid_rejects_empty_span():
    with pytest.raises(ParameterError):
        TimeGrid(1.0, 1.0, 10)


def test_boundary_interpolates_and_propagates_infinite():
    grid = TimeGrid(0.0, 1.0, 4)
    boundary = Boundary(grid, [np.inf, np.inf, 1.4, 1.3, 1.2])
    assert boundary.evaluate(0.5) == 1.4
    assert boundary.evaluate(0.625) == pytest.approx(1.35)
    assert boundary.is_infinite(0.3)
    assert boundary.is_infinite(0.4)
    many = boundary.evaluate_many(np.array([0.1, 0.5, 0.875]))
    assert math.isinf(many[0])
    assert many[1:] == pytest.approx([1.4, 1.25])
    with pytest.raises(ParameterError):
        boundary.evaluate(1.5)


@pytest.mark.parametrize("values", [[1.0, np.nan, 1.0], [1.0, -1.0, 1.0], [1.0, 1.0]])
def test_boundary_rejects_invalid_values(values):
    with pytest.raises(ParameterError):
        Boundary(TimeGrid(0.0, 1.0, 2), values)


def test_classify_case():
    params = MarketParams(r=0.1, delta=0.1, sigma=0.3, K=1.0)
    assert classify_case(params, TwoLevelCap(1.3, 1.39, 3.0, 4.0), 1.5) is CaseLabel.CASE_I
    assert classify_case(params, TwoLevelCap(1.3, 1.39, 3.0, 4.0), 1.3) is CaseLabel.CASE_II
    assert classify_case(params, TwoLevelCap(1.39, 1.39, 3.0, 4.0), 1.5) is CaseLabel.DEGENERATE
    left = TwoLevelCap(1.45, 1.3, 1.0, 2.0, continuity=Continuity.LEFT)
    assert classify_case(params, left, 1.5) is CaseLabel.CASE_III


def test_decreasing_cap_requires_left_continuity():
    params = MarketParams(r=0.03, delta=0.05, sigma=0.25, K=1.0)
    with pytest.raises(UnsupportedRegimeError) as info:
        classify_case(params, TwoLevelCap(1.45, 1.3, 1.0, 2.0), 1.6)
    assert info.value.L1 == 1.45 and info.value.L2 == 1.3


def test_t_zero_values(example1, case_ii):
    params, cap = example1
    assert t_zero(params, cap) == pytest.approx(0.3764, abs=1e-4)
    params, cap = case_ii
    assert t_zero(params, cap) == pytest.approx(0.22, abs=0.01)


def test_t_zero_negative_is_none():
    params = MarketParams(r=0.01, delta=0.05, sigma=0.25, K=1.0)
    assert t_zero(params, TwoLevelCap(1.1, 1.9, 1.0, 2.0)) is None
