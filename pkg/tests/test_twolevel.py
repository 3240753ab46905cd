import math

import numpy as np
import pytest

from pricing.analytic import discounted_hit_before, killed_expectation
from pricing.model import CaseLabel, MarketParams, TimeGrid, TwoLevelCap, UnsupportedRegimeError, t_zero
from pricing.numerics import BracketError, MonotonicityError, SolverError
from pricing.pipeline import STEP_BL1, SolverSettings, pipeline_step, price_points, solve_report
from pricing.singlecap import price_via_hitting
from pricing.twolevel import (
    GROSS_RISE,
    TOUCH_TOL,
    WaitingValueCurve,
    _hold_later_value,
    c_w,
    c_w_by_expectation,
    c_zero_case_i,
    c_zero_case_ii,
    find_T0_case_i,
    find_T0_case_ii,
    price_two_level,
    solve_bw,
    waiting_payoff,
)

from .conftest import DECREASING, EXAMPLE_1, FAST, NON_MONOTONE

# ---------------------------------------------------------------------------
# case I: first cap below the uncapped boundary at T1
# ---------------------------------------------------------------------------


def test_case_i_times_are_ordered(example1_report, example1):
    params, cap = example1
    report = example1_report
    assert report.case is CaseLabel.CASE_I
    assert report.t0 == pytest.approx(t_zero(params, cap))
    assert 0 < report.t0 < report.T0 < report.t1 < cap.T1 < report.t_star < cap.T2


def test_case_i_boundary_shape(example1_report, example1):
    _, cap = example1
    report = example1_report
    bl1 = report.bl1
    nodes, values = bl1.nodes, bl1.values
    assert bl1.grid.t_end == pytest.approx(report.t1)
    assert np.all(np.isinf(values[nodes <= report.t0]))
    assert np.all(values[nodes >= report.T0] == cap.L1)
    solved = np.isfinite(values) & (nodes < report.T0)
    assert solved.any()
    bw = report.bw.evaluate_many(nodes[solved])
    assert np.all(values[solved] >= cap.L1)
    assert np.all(values[solved] <= bw + 1e-9)


def test_case_i_waiting_boundary_reaches_first_cap_at_t1(example1_report, example1):
    params, cap = example1
    second = example1_report.engine.second_cap
    at_T1 = waiting_payoff(second, params, cap)
    t1 = example1_report.t1
    assert c_w_by_expectation(cap.L1, t1, at_T1, params, cap) == pytest.approx(cap.L1 - params.K, abs=1e-6)
    assert c_w(cap.L1, t1, second, params, cap) == pytest.approx(cap.L1 - params.K, abs=1e-2)


def test_waiting_value_forms_agree(example1_report, example1):
    params, cap = example1
    second = example1_report.engine.second_cap
    at_T1 = waiting_payoff(second, params, cap)
    for S in (0.9, 1.2, 1.3, 1.36, 1.5):
        for t in (1.0, 2.5, 2.95, cap.T1):
            direct = c_w_by_expectation(S, t, at_T1, params, cap)
            assert c_w(S, t, second, params, cap) == pytest.approx(direct, abs=1e-2)
    assert float(at_T1(np.array([1.6]))[0]) == pytest.approx(cap.L2 - params.K)


def test_case_i_exercise_at_first_cap_between_T0_and_t1(example1_report, example1):
    params, cap = example1
    t = 0.5 * (example1_report.T0 + example1_report.t1)
    assert price_two_level(cap.L1, t, example1_report, params) == pytest.approx(cap.L1 - params.K)
    below = price_two_level(cap.L1 - 0.05, t, example1_report, params)
    assert cap.L1 - 0.05 - params.K <= below <= cap.L1 - params.K


def test_case_i_exercise_above_first_cap_before_t0(example1_report, example1):
    params, cap = example1
    t = 0.5 * example1_report.t0
    for S in (cap.L1, 1.5, 3.0):
        assert price_two_level(S, t, example1_report, params) == pytest.approx(cap.L1 - params.K)


def test_case_i_continuation_above_band(example1_report, example1):
    params, cap = example1
    bl1 = example1_report.bl1
    nodes, values = bl1.nodes, bl1.values
    inside = np.nonzero(np.isfinite(values) & (values > cap.L1 * (1 + 1e-9)))[0]
    for i in inside[:: max(len(inside) // 4, 1)]:
        price = price_two_level(values[i] * 1.1, nodes[i], example1_report, params)
        assert price >= cap.L1 - params.K - 1e-6


def test_case_i_late_prices(example1_report, example1):
    params, cap = example1
    second = example1_report.engine.second_cap
    at_T1 = waiting_payoff(second, params, cap)
    t = 0.5 * (example1_report.t1 + cap.T1)
    late = price_two_level(1.2, t, example1_report, params)
    assert late == pytest.approx(c_w_by_expectation(1.2, t, at_T1, params, cap))
    assert late == pytest.approx(c_w(1.2, t, second, params, cap), abs=1e-2)
    assert price_two_level(1.2, 3.5, example1_report, params) == pytest.approx(price_via_hitting(1.2, 3.5, second, params))


def test_case_i_continuation_beats_exercise_after_t1(example1_report, example1):
    params, cap = example1
    t1 = example1_report.t1
    for t in (t1 + 0.02, 0.5 * (t1 + cap.T1), cap.T1 - 0.02):
        for S in (1.1, 1.25, cap.L1, 1.35, 1.5):
            exercise = max(min(S, cap.L1) - params.K, 0.0)
            assert price_two_level(S, t, example1_report, params) > exercise + 1e-9, (S, t)


def test_price_points_mark_regions(example1_report, example1):
    params, cap = example1
    t = 0.5 * example1_report.t0
    exercise, hold = price_points(example1_report, [(1.5, t), (1.0, 1.0)])
    assert exercise.region == "exercise"
    assert exercise.payoff == pytest.approx(cap.L1 - params.K)
    assert hold.region == "continuation"
    assert hold.price > hold.payoff


# ---------------------------------------------------------------------------
# T0 scans and the case I waiting value
# ---------------------------------------------------------------------------


def _curve(slope, horizon=1.0):
    grid = TimeGrid(0.0, 1.0, 4)
    eps = 1e-4
    above = np.array([0.3 + eps * slope(t) for t in grid.nodes])
    return WaitingValueCurve(grid, 0.3, eps, above, above, above, slope, horizon=horizon)


def test_find_T0_takes_the_last_sign_change():
    curve = _curve(lambda t: t - 0.3)
    assert find_T0_case_i(curve, 1.0) == pytest.approx(0.3, abs=1e-7)
    assert find_T0_case_ii(curve) == pytest.approx(0.3, abs=1e-7)


def test_find_T0_without_sign_change():
    assert find_T0_case_i(_curve(lambda t: 1.0 + t), 1.0) == 0.0
    assert find_T0_case_ii(_curve(lambda t: -1.0)) == 1.0


def test_c_zero_case_i_pays_the_first_cap_at_first_passage(example1):
    params, cap = example1

    def nothing(x):
        return np.zeros_like(np.asarray(x, dtype=float))

    assert c_zero_case_i(cap.L1, 1.0, 2.5, params, nothing, cap) == pytest.approx(cap.L1 - params.K)
    hit = float(discounted_hit_before(1.1, cap.L1, 1.0, 2.5, params))
    assert c_zero_case_i(1.1, 1.0, 2.5, params, nothing, cap) == pytest.approx((cap.L1 - params.K) * hit, rel=1e-6)


def test_solve_bw_matches_the_report(example1_report, example1):
    params, cap = example1
    second = example1_report.engine.second_cap
    bw, t1 = solve_bw(second, params, cap, TimeGrid(2.0, cap.T1, 4))
    assert t1 == pytest.approx(example1_report.t1, abs=1e-6)
    payoff = cap.L1 - params.K
    for t, b in zip(bw.nodes, bw.values):
        if np.isfinite(b):
            assert c_w(b, t, second, params, cap) == pytest.approx(payoff, abs=1e-7)


# ---------------------------------------------------------------------------
# case II: first cap at or above the uncapped boundary at T1
# ---------------------------------------------------------------------------


def test_case_ii_structure(case_ii_report, case_ii):
    params, cap = case_ii
    report = case_ii_report
    assert report.case is CaseLabel.CASE_II
    assert report.B_at_T1 <= cap.L1
    assert report.t1 is None
    assert 0 < report.t0 < report.T0 < cap.T1
    nodes, values = report.bl1.nodes, report.bl1.values
    assert np.all(np.isinf(values[nodes <= report.t0]))
    assert np.all(values[np.isfinite(values)] >= cap.L1)


def test_case_ii_below_first_cap_uses_single_cap(case_ii_report, case_ii):
    params, cap = case_ii
    first = case_ii_report.engine.case_solution.first_cap
    for S, t in ((1.1, 0.5), (1.3, 2.0)):
        assert price_two_level(S, t, case_ii_report, params) == pytest.approx(price_via_hitting(S, t, first, params))
    assert price_two_level(cap.L1, 1.0, case_ii_report, params) == pytest.approx(cap.L1 - params.K)


def test_case_ii_waiting_region_after_T0(case_ii_report, case_ii):
    params, cap = case_ii
    t = 0.5 * (case_ii_report.T0 + cap.T1)
    price, _ = c_zero_case_ii(1.6, t, params, cap)
    assert price_two_level(1.6, t, case_ii_report, params) == pytest.approx(price)
    assert price > cap.L1 - params.K
    _, slope_at_L1 = c_zero_case_ii(cap.L1, t, params, cap)
    assert slope_at_L1 > 0


# ---------------------------------------------------------------------------
# case III: decreasing cap, left-continuous at T1
# ---------------------------------------------------------------------------


def test_case_iii_boundary(decreasing_report, decreasing):
    params, cap = decreasing
    report = decreasing_report
    solution = report.engine.case_solution
    assert report.case is CaseLabel.CASE_III
    assert report.bl1_at_T1 == pytest.approx(min(cap.L2, report.B_at_T1))
    expected_left = min(max(params.dividend_threshold, report.bl1_at_T1), cap.L1)
    assert solution.left_limit == pytest.approx(expected_left)
    values = report.bl1.values
    assert values[-1] == pytest.approx(expected_left)
    assert np.all(np.diff(values) <= 1e-12)
    assert np.all(values <= cap.L1)
    assert 0 < report.t_star1 < cap.T1
    assert np.all(values[report.bl1.nodes < report.t_star1 - report.bl1.grid.h] == cap.L1)


def test_case_iii_prices(decreasing_report, decreasing):
    params, cap = decreasing
    report = decreasing_report
    assert price_two_level(1.6, 0.5, report, params) == pytest.approx(cap.L1 - params.K)
    t = 0.5 * (report.t_star1 + cap.T1)
    b = report.bl1.evaluate(t)
    assert b < cap.L1
    S = 0.5 * (b + cap.L1)
    assert price_two_level(S, t, report, params) == pytest.approx(S - params.K)
    inside = price_two_level(1.1, t, report, params)
    assert inside >= 0.1
    # at T1 the first cap still applies
    assert price_two_level(1.4, cap.T1, report, params) == pytest.approx(0.4)
    second = report.engine.second_cap
    assert price_two_level(1.2, 1.5, report, params) == pytest.approx(price_via_hitting(1.2, 1.5, second, params))


@pytest.mark.parametrize("steps", [40, 100])
def test_case_iii_solves_on_other_grids(decreasing, decreasing_report, steps):
    params, cap = decreasing
    settings = SolverSettings(uncapped_steps=120, two_level_steps=steps, single_cap_steps=60)
    report = solve_report(params, cap, settings)
    values = report.bl1.values
    floor = min(params.dividend_threshold, cap.L1)
    assert np.all(np.diff(values) <= 1e-12)
    assert np.all(values >= floor - 1e-12)
    assert np.all(values <= cap.L1)
    assert 0 < report.t_star1 < cap.T1
    assert report.t_star1 == pytest.approx(decreasing_report.t_star1, abs=0.1)


def test_case_iii_holds_a_slightly_rising_node():
    touch = TOUCH_TOL
    flagged = []

    def residual(b):
        return 40.0 * touch * (b - 1.4)

    _hold_later_value(residual, 0.6, 1.45, residual(1.45), 1e-12, 5, 0.25, 1.0, flagged)
    assert len(flagged) == 1
    assert "held at the later value 1.45" in flagged[0]
    root = float(flagged[0].split("root near ")[1].rstrip(")"))
    assert root == pytest.approx(1.375, abs=1e-6)


def test_case_iii_gross_rise_is_an_error():
    with pytest.raises(MonotonicityError) as info:
        _hold_later_value(lambda b: 2.0 * GROSS_RISE, 0.6, 1.45, 2.0 * GROSS_RISE, 1e-12, 5, 0.25, 1.0, [])
    assert info.value.node == 5


def test_decreasing_cap_needs_left_continuity(decreasing):
    params, cap = decreasing
    right = TwoLevelCap(cap.L1, cap.L2, cap.T1, cap.T2)
    with pytest.raises(UnsupportedRegimeError):
        solve_report(params, right, FAST)


# ---------------------------------------------------------------------------
# degenerate and pipeline plumbing
# ---------------------------------------------------------------------------


def test_equal_levels_price_as_a_single_cap():
    params, _ = EXAMPLE_1
    cap = TwoLevelCap(L1=1.39, L2=1.39, T1=3.0, T2=4.0)
    report = solve_report(params, cap, SolverSettings(uncapped_steps=80, two_level_steps=20, single_cap_steps=20))
    assert report.case is CaseLabel.DEGENERATE
    assert report.bl1 is None
    assert any("Degenerate" in note for note in report.diagnostics.notes)
    second = report.engine.second_cap
    for S, t in ((1.0, 0.5), (1.3, 2.0), (1.5, 1.0)):
        assert price_two_level(S, t, report, params) == price_via_hitting(S, t, second, params)


def test_pipeline_step_names_solver_errors():
    with pytest.raises(SolverError) as info:
        with pipeline_step(STEP_BL1):
            raise BracketError("no sign change", node=3, bracket=(1.0, 2.0))
    assert info.value.step == STEP_BL1
    assert str(info.value).startswith(f"[{STEP_BL1}]")
    assert info.value.node == 3


def test_report_diagnostics_are_populated(example1_report):
    diag = example1_report.diagnostics
    assert {"uncapped", "bl2_integral_equation", "bl1"} <= set(diag.residuals)
    assert {"cap_L2", "sub_cap_L1", "boundary_B_L1"} <= set(diag.derivative_errors)
    assert all(math.isfinite(v) for v in diag.residuals.values())


def test_band_solve_on_the_non_monotone_set():
    params, cap = NON_MONOTONE
    report = solve_report(params, cap, FAST)
    assert report.case is CaseLabel.CASE_I
    nodes, values = report.bl1.nodes, report.bl1.values
    solved = np.isfinite(values) & (nodes < report.T0)
    assert np.all(values[solved] >= cap.L1)
    assert np.all(values[solved] <= report.bw.evaluate_many(nodes[solved]) + 1e-9)
    assert np.all(values[nodes >= report.T0] == cap.L1)
    assert not any("clamped" in item for item in report.diagnostics.flagged_nodes)
    if np.any(solved & (values == cap.L1)):
        assert any("exercise only at the first cap" in note for note in report.diagnostics.notes)


def test_zero_dividend_exercises_only_at_the_caps():
    params = MarketParams(r=0.1, delta=0.0, sigma=0.3, K=1.0)
    cap = TwoLevelCap(L1=1.3, L2=1.39, T1=3.0, T2=4.0)
    report = solve_report(params, cap, FAST)
    assert report.case is CaseLabel.CASE_I
    assert np.all(np.isinf(report.uncapped.values))
    assert report.t_star == cap.T2
    assert np.all(report.bl2.values == cap.L2)
    for t in (3.2, 3.6, 3.9):
        assert price_two_level(cap.L2, t, report, params) == pytest.approx(cap.L2 - params.K)
        for S in (1.0, 1.2, 1.35):
            assert price_two_level(S, t, report, params) > S - params.K


def test_zero_dividend_equal_levels_match_hit_or_hold():
    params = MarketParams(r=0.1, delta=0.0, sigma=0.3, K=1.0)
    L = 1.39
    report = solve_report(params, TwoLevelCap(L1=L, L2=L, T1=3.0, T2=4.0), FAST)
    assert report.case is CaseLabel.DEGENERATE

    def call(x):
        return np.maximum(np.asarray(x, dtype=float) - params.K, 0.0)

    for S, t in ((1.0, 0.5), (1.2, 2.0), (1.35, 3.5)):
        hit = float(discounted_hit_before(S, L, t, 4.0, params))
        expected = (L - params.K) * hit + killed_expectation(S, L, t, 4.0, params, call, breakpoints=(params.K,))
        assert price_two_level(S, t, report, params) == pytest.approx(expected, abs=1e-6)


# ---------------------------------------------------------------------------
# acceptance values on production grids
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_worked_example_times():
    params, cap = EXAMPLE_1
    report = solve_report(params, cap)
    assert report.t0 == pytest.approx(0.3764, abs=1e-4)
    assert report.T0 == pytest.approx(1.78, abs=0.02)
    assert report.t1 == pytest.approx(2.93, abs=0.02)
    assert report.t_star == pytest.approx(3.66, abs=0.02)


@pytest.mark.slow
def test_non_monotone_upper_boundary():
    params = MarketParams(r=0.05, delta=0.05, sigma=0.5, K=1.0)
    cap = TwoLevelCap(L1=1.28, L2=1.3, T1=1.0, T2=2.0)
    report = solve_report(params, cap)
    assert report.case is CaseLabel.CASE_I
    assert report.T0 == pytest.approx(0.386, abs=0.01)
    assert report.t1 == pytest.approx(0.988, abs=0.01)
    values = report.bl1.values
    finite = np.isfinite(values[:-1]) & np.isfinite(values[1:])
    assert np.any(finite & (np.diff(values) > 0))


@pytest.mark.slow
def test_case_ii_acceptance(case_ii):
    params, cap = case_ii
    report = solve_report(params, cap)
    assert report.t0 == pytest.approx(0.22, abs=0.01)
    assert report.T0 == pytest.approx(1.79, abs=0.02)


@pytest.mark.slow
def test_case_iii_acceptance():
    params, cap = DECREASING
    report = solve_report(params, cap)
    assert report.t_star1 == pytest.approx(0.75, abs=0.02)
    assert report.t_star == pytest.approx(1.63, abs=0.02)
