"""Two-level cap: the wait-until-T1 value and its boundary B^w, the waiting
values C0 and T0, and the case-specific integral equations for the upper
exercise boundary B^{L,1} together with their early-exercise-premium prices."""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from utils.config import (
    BOUNDARY_EPS_FACTOR,
    CAP_EPS_FACTOR,
    RESIDUAL_FLAG,
    TABULATION_POINTS,
    TAIL_STDEVS,
    TIME_ROOT_TOL,
)
from utils.logger import get_logger

from .analytic import discounted_expectation, discounted_hit_before, european_capped_call, killed_expectation
from .model import Boundary, MarketParams, TimeGrid, TwoLevelCap
from .numerics import (
    BracketError,
    MonotonicityError,
    PiecewisePayoff,
    bracketed_root,
    expand_upper,
    largest_root,
    root_tolerance,
    tabulate,
)
from .premium import DividendBand, LocalTimeTerm, OccupancyBand, PremiumTerms, discounted_premium
from .singlecap import SingleCapSolution, premium_components, price_via_hitting
from .uncapped import UncappedSolution

logger = get_logger("twolevel")

NODE_TOL = 1e-9
BAND_SCAN_POINTS = 8
# Case III residuals within TOUCH_TOL * K count as touching the exercise value;
# a node whose later value leaves a residual above GROSS_RISE * K is an error.
TOUCH_TOL = 10.0 * RESIDUAL_FLAG
GROSS_RISE = 1000.0 * RESIDUAL_FLAG


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _log_range(center: float, params: MarketParams, horizon: float) -> tuple[float, float]:
    spread = TAIL_STDEVS * params.sigma * math.sqrt(max(horizon, 1e-8)) + abs(params.mu) * horizon + 0.5
    return center * math.exp(-spread), center * math.exp(spread)


def _cluster(level: float, width: float, count: int = 41) -> np.ndarray:
    return level * np.exp(np.linspace(-1.0, 1.0, count) * width)


def _hit_or_hold(S, L: float, t: float, T: float, params: MarketParams, G: Callable, breakpoints: Sequence[float] = ()):
    """(L - K) paid at the first passage through L before T, otherwise G(S_T) at T."""
    S_arr = np.atleast_1d(np.asarray(S, dtype=float))
    out = np.empty_like(S_arr)
    for k, s in enumerate(S_arr):
        if s == L:
            out[k] = L - params.K
            continue
        hit = float(discounted_hit_before(s, L, t, T, params))
        out[k] = (L - params.K) * hit + killed_expectation(s, L, t, T, params, G, breakpoints=breakpoints)
    if np.ndim(S) == 0:
        return float(out[0])
    return out


def _path(grid: TimeGrid, T_end: float, t: float, node_values, end_value: float, first_value: float = 0.0):
    """Times [t, grid nodes strictly inside (t, T_end), T_end] and the values sampled on them."""
    nodes = grid.nodes
    tol = NODE_TOL * grid.h
    mask = (nodes > t + tol) & (nodes < T_end - tol)
    times = np.concatenate(([t], nodes[mask], [T_end]))
    values = np.concatenate(([first_value], np.asarray(node_values, dtype=float)[mask], [end_value]))
    return times, values


def _jump_notes(boundary: np.ndarray, grid: TimeGrid, K: float, label: str) -> list[str]:
    notes = []
    limit = 10.0 * grid.h * K
    for i in range(grid.n_steps):
        a, b = boundary[i], boundary[i + 1]
        if math.isfinite(a) and math.isfinite(b) and abs(b - a) > limit:
            notes.append(f"{label} jump {abs(b - a):.4g} between t={grid.nodes[i]:.6g} and t={grid.nodes[i + 1]:.6g}")
    return notes


# ---------------------------------------------------------------------------
# waiting value C^w and its boundary B^w
# ---------------------------------------------------------------------------


def c_w(S, t: float, singlecap: SingleCapSolution, params: MarketParams, cap: TwoLevelCap):
    """Value of waiting until T1 and holding the L2-capped option from there."""
    t = min(t, cap.T1)
    european = np.asarray(european_capped_call(S, t, singlecap.level, singlecap.maturity, params), dtype=float)
    total = european + sum(premium_components(S, t, singlecap, params, t_begin=cap.T1))
    if np.ndim(S) == 0:
        return float(total[0])
    return total


def solve_bw(
    singlecap: SingleCapSolution,
    params: MarketParams,
    cap: TwoLevelCap,
    grid: TimeGrid,
    at_T1: Optional[PiecewisePayoff] = None,
) -> tuple[Boundary, float]:
    """B^w(t) solving C^w(B^w(t), t) = L1 - K on grid nodes, and t1, the last time B^w reaches L1."""
    payoff = cap.L1 - params.K
    nodes = grid.nodes
    values = np.full(nodes.size, np.inf)
    xtol = root_tolerance(params.K)
    for i, t in enumerate(nodes):
        if (cap.L2 - params.K) * math.exp(-params.r * (cap.T1 - t)) <= payoff:
            continue

        def gap(s: float, t=t) -> float:
            return c_w(s, t, singlecap, params, cap) - payoff

        lo = 0.5 * min(cap.L1, params.K)
        f_lo = gap(lo)
        if f_lo >= 0:
            raise BracketError(f"waiting value exceeds L1-K at S={lo:.6g}", node=i, bracket=(lo, cap.L1))
        hi, f_hi = expand_upper(gap, cap.L1, 1000.0 * cap.L2)
        if f_hi <= 0:
            continue
        values[i] = bracketed_root(gap, lo, hi, xtol, node=i, f_lo=f_lo, f_hi=f_hi)
    bw = Boundary(grid, values)
    if at_T1 is None:
        at_T1 = waiting_payoff(singlecap, params, cap)

    def gap_at_L1(s: float) -> float:
        return c_w_by_expectation(cap.L1, s, at_T1, params, cap) - payoff

    at_L1 = np.array([gap_at_L1(t) for t in nodes])
    reached = np.nonzero(at_L1 <= 0)[0]
    if reached.size == 0:
        t1 = 0.0
    elif reached[-1] == nodes.size - 1:
        logger.warning("B^w reaches L1 at T1; the first cap is not below the uncapped boundary")
        t1 = float(nodes[-1])
    else:
        j = int(reached[-1])
        t1 = bracketed_root(gap_at_L1, nodes[j], nodes[j + 1], TIME_ROOT_TOL, f_lo=at_L1[j], f_hi=at_L1[j + 1])
    if 0 < t1 < cap.T1:
        logger.info("premium form of C^w at (L1, t1) is off by %.3e", c_w(cap.L1, t1, singlecap, params, cap) - payoff)
    logger.info("B^w solved on %d nodes, t1=%.8g", nodes.size, t1)
    return bw, t1


def waiting_payoff(singlecap: SingleCapSolution, params: MarketParams, cap: TwoLevelCap) -> PiecewisePayoff:
    """C^{A,L2}(., T1) from the hitting-time price, tabulated below L2; L2 - K from L2 up."""
    L2 = singlecap.level
    lo, _ = _log_range(L2, params, singlecap.maturity - cap.T1)
    extra = np.concatenate((_cluster(L2, 0.5 * params.sigma), _cluster(params.K, 0.5 * params.sigma)))
    below = tabulate(
        lambda x: price_via_hitting(x, cap.T1, singlecap, params), lo, L2, TABULATION_POINTS, below=0.0, extra=extra
    )

    def capped(x):
        return np.full(np.shape(x), L2 - params.K)

    return PiecewisePayoff((0.0, L2, math.inf), (below, capped))


def c_w_by_expectation(S, t: float, at_T1: Callable, params: MarketParams, cap: TwoLevelCap):
    """C^w as the discounted expectation of C^{A,L2}(S_T1, T1); `at_T1` comes from waiting_payoff."""
    return discounted_expectation(S, min(t, cap.T1), cap.T1, at_T1, params)


def tabulate_waiting_value(t: float, singlecap: SingleCapSolution, params: MarketParams, cap: TwoLevelCap) -> Callable:
    lo, hi = _log_range(cap.L1, params, t)
    width = 5.0 * params.sigma * math.sqrt(max(cap.T1 - t, 1e-4))
    extra = np.concatenate((_cluster(cap.L2, width), _cluster(cap.L1, width)))
    table = tabulate(lambda x: c_w(x, t, singlecap, params, cap), lo, hi, TABULATION_POINTS, below=0.0, extra=extra)
    table.kinks = ()
    return table


# ---------------------------------------------------------------------------
# waiting values C0 and T0
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WaitingValueCurve:
    grid: TimeGrid
    payoff: float
    eps: float
    cw_at_L1: np.ndarray
    c0_above: np.ndarray
    c0_below: np.ndarray
    slope_fn: Callable[[float], float] = field(repr=False)
    horizon: float = 0.0

    @property
    def slope_above(self) -> np.ndarray:
        return (self.c0_above - self.payoff) / self.eps

    @property
    def slope_below(self) -> np.ndarray:
        return (self.payoff - self.c0_below) / self.eps


@dataclass(frozen=True, eq=False)
class CaseISkeleton:
    t0: Optional[float]
    t1: float
    T0: float
    bw: Boundary
    bl1: Optional[Boundary] = None


def c_zero_case_i(S, t: float, t1: float, params: MarketParams, cw_at_t1: Callable, cap: TwoLevelCap):
    """Exercise at the first passage through L1 before t1, else collect C^w(., t1)."""
    return _hit_or_hold(S, cap.L1, t, t1, params, cw_at_t1, breakpoints=(cap.L2,))


def waiting_value_curve_case_i(
    grid: TimeGrid,
    t1: float,
    cw_at_t1: Callable,
    singlecap: SingleCapSolution,
    params: MarketParams,
    cap: TwoLevelCap,
    eps: Optional[float] = None,
) -> WaitingValueCurve:
    L1 = cap.L1
    eps = eps or CAP_EPS_FACTOR * L1
    nodes = grid.nodes
    cw_at_L1 = np.array([c_w(L1, t, singlecap, params, cap) for t in nodes])
    above = np.full(nodes.size, np.nan)
    below = np.full(nodes.size, np.nan)
    for i, t in enumerate(nodes):
        if t < t1:
            above[i] = c_zero_case_i(L1 + eps, t, t1, params, cw_at_t1, cap)
            below[i] = c_zero_case_i(L1 - eps, t, t1, params, cw_at_t1, cap)
    payoff = L1 - params.K

    def slope(t: float) -> float:
        return (c_zero_case_i(L1 + eps, t, t1, params, cw_at_t1, cap) - payoff) / eps

    return WaitingValueCurve(grid, payoff, eps, cw_at_L1, above, below, slope, horizon=t1)


def _backward_first_non_positive(curve: WaitingValueCurve, end: float) -> float:
    """Latest time before `end` where curve.slope_fn turns non-positive, 0 if it never does."""
    nodes = curve.grid.nodes
    slope = curve.slope_above
    tol = NODE_TOL * curve.grid.h
    candidates = [i for i in range(nodes.size) if nodes[i] < end - tol]
    for pos in range(len(candidates) - 1, -1, -1):
        i = candidates[pos]
        if slope[i] > 0:
            continue
        if pos + 1 < len(candidates):
            right, f_right = nodes[candidates[pos + 1]], slope[candidates[pos + 1]]
        else:
            right, f_right = end, curve.slope_fn(end)
        if f_right <= 0:
            return float(right)
        return bracketed_root(curve.slope_fn, nodes[i], right, TIME_ROOT_TOL, f_lo=slope[i], f_hi=f_right)
    return 0.0


def find_T0_case_i(curve: WaitingValueCurve, t1: float) -> float:
    T0 = _backward_first_non_positive(curve, t1)
    logger.info("case I: T0=%.8g", T0)
    return T0


def c_zero_payoff_case_i(
    T0: float, t1: float, cw_at_t1: Callable, params: MarketParams, cap: TwoLevelCap
) -> PiecewisePayoff:
    """C0(., T0) tabulated on both sides of L1, the terminal payoff of the band contract."""
    L1 = cap.L1
    lo, hi = _log_range(L1, params, max(T0, 1e-6))
    extra = np.concatenate((_cluster(L1, 0.5 * params.sigma), _cluster(cap.L2, 0.5 * params.sigma)))

    def fn(x):
        return c_zero_case_i(x, T0, t1, params, cw_at_t1, cap)

    below = tabulate(fn, lo, L1, TABULATION_POINTS, below=0.0, extra=extra)
    above = tabulate(fn, L1, hi, TABULATION_POINTS, extra=extra)
    return PiecewisePayoff((0.0, L1, math.inf), (below, above))


def sub_cap_derivative(
    grid: TimeGrid, T0: float, terminal: Callable, params: MarketParams, cap: TwoLevelCap, eps: Optional[float] = None
) -> tuple[np.ndarray, np.ndarray, float]:
    """C_S(L1-, v) for v <= T0 from the hit-L1-or-hold-to-T0 price, per grid node and at T0."""
    L1 = cap.L1
    eps = eps or CAP_EPS_FACTOR * L1
    payoff = L1 - params.K

    def derivative(t: float) -> tuple[float, float]:
        full = (payoff - _hit_or_hold(L1 - eps, L1, t, T0, params, terminal, (params.K,))) / eps
        half = (payoff - _hit_or_hold(L1 - 0.5 * eps, L1, t, T0, params, terminal, (params.K,))) / (0.5 * eps)
        return min(max(full, 0.0), 1.0), abs(full - half)

    at_T0, _ = derivative(T0)
    nodes = grid.nodes
    values = np.full(nodes.size, at_T0)
    errors = np.zeros(nodes.size)
    for i, t in enumerate(nodes):
        if t < T0 - NODE_TOL * grid.h:
            values[i], errors[i] = derivative(t)
    logger.info("sub-cap derivative at L1: range [%.6g, %.6g]", values.min(), values.max())
    return values, errors, at_T0


def c_zero_case_ii(S, t: float, params: MarketParams, cap: TwoLevelCap, eps: Optional[float] = None):
    """Down-and-out capped call with rebate L1-K at L1; returns (price, slope at L1+)."""
    price = _c_zero_case_ii_price(S, t, params, cap)
    eps = eps or CAP_EPS_FACTOR * cap.L1
    payoff = cap.L1 - params.K
    slope = (_c_zero_case_ii_price(cap.L1 + eps, t, params, cap) - payoff) / eps
    return price, slope


def _capped_terminal(params: MarketParams, cap: TwoLevelCap):
    def payoff(x):
        return np.minimum(np.asarray(x, dtype=float), cap.L2) - params.K

    payoff.kinks = (cap.L2,)
    return payoff


def _c_zero_case_ii_price(S, t: float, params: MarketParams, cap: TwoLevelCap):
    return _hit_or_hold(S, cap.L1, t, cap.T1, params, _capped_terminal(params, cap), (cap.L2,))


def waiting_value_curve_case_ii(
    grid: TimeGrid, params: MarketParams, cap: TwoLevelCap, eps: Optional[float] = None
) -> WaitingValueCurve:
    L1 = cap.L1
    eps = eps or CAP_EPS_FACTOR * L1
    nodes = grid.nodes
    payoff = L1 - params.K
    above = np.full(nodes.size, np.nan)
    below = np.full(nodes.size, np.nan)
    for i, t in enumerate(nodes):
        if t < cap.T1:
            above[i] = _c_zero_case_ii_price(L1 + eps, t, params, cap)
            below[i] = payoff

    def slope(t: float) -> float:
        return (_c_zero_case_ii_price(L1 + eps, t, params, cap) - payoff) / eps

    return WaitingValueCurve(grid, payoff, eps, np.full(nodes.size, np.nan), above, below, slope, horizon=cap.T1)


def find_T0_case_ii(curve: WaitingValueCurve) -> float:
    T0 = _backward_first_non_positive(curve, curve.horizon)
    logger.info("case II: T0=%.8g", T0)
    return T0


# ---------------------------------------------------------------------------
# band boundary B^{L,1} above L1 (cases I and II)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BandPremium:
    """European value of the T0 payoff plus the premium of an exercise band [L1, B^{L,1}(v)]."""

    params: MarketParams
    cap: TwoLevelCap
    T0: float
    grid: TimeGrid
    terminal: PiecewisePayoff
    sub_cap_derivative: np.ndarray
    sub_cap_derivative_T0: float
    edge_derivative_T0: float
    floor: Optional[Boundary] = None

    def value(self, S, t: float, boundary_values, edge_derivative, first: float) -> np.ndarray:
        L1 = self.cap.L1
        params = self.params
        times, upper = _path(self.grid, self.T0, t, boundary_values, L1, first)
        _, edge = _path(self.grid, self.T0, t, edge_derivative, self.edge_derivative_T0)
        _, sub = _path(self.grid, self.T0, t, self.sub_cap_derivative, self.sub_cap_derivative_T0)
        flat = np.full(times.size, L1)
        dividend = ()
        if self.floor is not None:
            dividend = (DividendBand(self.floor.evaluate_many(times), flat),)
        terms = PremiumTerms(
            dividend=dividend,
            occupancy=(OccupancyBand(flat, upper, params.r * (L1 - params.K)),),
            local_time=(LocalTimeTerm(upper, edge, -0.5), LocalTimeTerm(flat, sub, 0.5)),
        )
        european = np.atleast_1d(discounted_expectation(S, t, self.T0, self.terminal, params))
        return european + discounted_premium(S, t, times, params, terms)


@dataclass(frozen=True, eq=False)
class BandInduction:
    values: np.ndarray
    edge_derivative: np.ndarray
    derivative_error: np.ndarray
    residuals: np.ndarray
    flagged: tuple[str, ...]
    notes: tuple[str, ...]


def _band_induction(
    band: BandPremium,
    t0: Optional[float],
    top: Callable[[float, Callable[[float], float]], Optional[tuple[float, float]]],
    assume_smooth_fit: bool,
    eps: float,
    label: str,
) -> BandInduction:
    params, cap, grid = band.params, band.cap, band.grid
    L1 = cap.L1
    payoff = L1 - params.K
    nodes = grid.nodes
    tol = NODE_TOL * grid.h
    values = np.full(nodes.size, L1)
    edge = np.full(nodes.size, band.edge_derivative_T0)
    errors = np.zeros(nodes.size)
    residuals = np.zeros(nodes.size)
    flagged: list[str] = []
    empty: list[int] = []
    xtol = root_tolerance(params.K)
    below = [i for i in range(nodes.size) if nodes[i] < band.T0 - tol]
    if assume_smooth_fit:
        edge[:] = 0.0
    logger.info("%s: backward induction over %d nodes below T0=%.6g", label, len(below), band.T0)

    for i in reversed(below):
        t = nodes[i]
        values[i] = np.nan
        if t0 is not None and t <= t0 + tol:
            values[i] = np.inf
            edge[i] = 0.0
            continue

        def residual(b: float, t=t) -> float:
            return float(band.value(b, t, values, edge, b)[0]) - payoff

        bracket = top(t, residual)
        if bracket is None:
            values[i] = np.inf
            edge[i] = 0.0
            logger.debug("%s node %d t=%.6g: no finite boundary", label, i, t)
            continue
        hi, f_hi = bracket
        lo = L1 * (1.0 + 1e-12)
        f_lo = residual(lo)
        root = largest_root(residual, lo, hi, xtol, BAND_SCAN_POINTS, node=i, f_lo=f_lo, f_hi=f_hi)
        if root is None:
            b = L1
            empty.append(i)
            logger.debug("%s node %d t=%.6g: no exercise band above L1 (residual %.3e)", label, i, t, f_lo)
        else:
            b = root
        values[i] = b
        base = residual(b) + payoff
        residuals[i] = abs(base - payoff)
        if residuals[i] > RESIDUAL_FLAG * params.K:
            flagged.append(f"{label}[{i}] t={t:.6g} residual {residuals[i]:.3e}")
        if not assume_smooth_fit:

            def shifted(s: float, t=t, b=b) -> float:
                return float(band.value(s, t, values, edge, b)[0])

            full = (shifted(b + eps) - base) / eps
            half = (shifted(b + 0.5 * eps) - base) / (0.5 * eps)
            edge[i] = max(full, 0.0)
            errors[i] = abs(full - half)
        logger.debug("%s node %d t=%.6g B=%.10g D=%.6g", label, i, t, b, edge[i])

    notes = _jump_notes(values, grid, params.K, label)
    if empty:
        notes.append(
            f"{label} equals L1 at {len(empty)} node(s) below T0, from t={nodes[min(empty)]:.6g}: "
            "exercise only at the first cap there"
        )
    for note in notes:
        logger.warning(note)
    for item in flagged:
        logger.warning(item)
    return BandInduction(values, edge, errors, residuals, tuple(flagged), tuple(notes))


@dataclass(frozen=True, eq=False)
class CaseISolution:
    params: MarketParams
    cap: TwoLevelCap
    singlecap: SingleCapSolution
    skeleton: CaseISkeleton
    curve: Optional[WaitingValueCurve]
    cw_at_t1: Optional[Callable] = field(repr=False)
    band: Optional[BandPremium] = field(default=None, repr=False)
    induction: Optional[BandInduction] = field(default=None, repr=False)
    sub_cap_errors: Optional[np.ndarray] = field(default=None, repr=False)
    at_T1: Optional[Callable] = field(default=None, repr=False)

    def price(self, s: float, t: float) -> float:
        cap, params, sk = self.cap, self.params, self.skeleton
        if t >= sk.t1:
            if self.at_T1 is None:
                return c_w(s, t, self.singlecap, params, cap)
            return float(c_w_by_expectation(s, t, self.at_T1, params, cap))
        if t >= sk.T0 or self.band is None:
            return c_zero_case_i(s, t, sk.t1, params, self.cw_at_t1, cap)
        if s < cap.L1:
            return _hit_or_hold(s, cap.L1, t, sk.T0, params, self.band.terminal, (params.K,))
        b = sk.bl1.evaluate(t)
        if s <= b:
            return cap.L1 - params.K
        return float(self.band.value(s, t, self.induction.values, self.induction.edge_derivative, b)[0])


def solve_bl1_case_i(
    skeleton: CaseISkeleton,
    params: MarketParams,
    grid: TimeGrid,
    *,
    cap: TwoLevelCap,
    singlecap: SingleCapSolution,
    curve: WaitingValueCurve,
    cw_at_t1: Callable,
    terminal: PiecewisePayoff,
    sub_derivative: tuple[np.ndarray, np.ndarray, float],
    at_T1: Optional[Callable] = None,
    assume_smooth_fit: bool = False,
    eps: Optional[float] = None,
) -> CaseISolution:
    """Backward induction for B^{L,1} on [0, T0]; the boundary equals L1 on [T0, t1]."""
    eps = eps or BOUNDARY_EPS_FACTOR * params.K
    sub_values, sub_errors, sub_T0 = sub_derivative
    band = BandPremium(
        params=params,
        cap=cap,
        T0=skeleton.T0,
        grid=grid,
        terminal=terminal,
        sub_cap_derivative=sub_values,
        sub_cap_derivative_T0=sub_T0,
        edge_derivative_T0=0.0 if assume_smooth_fit else max(curve.slope_fn(skeleton.T0), 0.0),
    )

    def top(t: float, residual: Callable[[float], float]) -> Optional[tuple[float, float]]:
        hi = skeleton.bw.evaluate(t)
        if not math.isfinite(hi) or hi <= cap.L1:
            return None
        f_hi = residual(hi)
        if f_hi < 0:
            return None
        return hi, f_hi

    induction = _band_induction(band, skeleton.t0, top, assume_smooth_fit, eps, "B_L1")
    bl1 = Boundary(grid, induction.values)
    solved = CaseISkeleton(skeleton.t0, skeleton.t1, skeleton.T0, skeleton.bw, bl1)
    return CaseISolution(params, cap, singlecap, solved, curve, cw_at_t1, band, induction, sub_errors, at_T1)


# ---------------------------------------------------------------------------
# case II
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CaseIISolution:
    params: MarketParams
    cap: TwoLevelCap
    T0: float
    t0: Optional[float]
    first_cap: SingleCapSolution
    curve: WaitingValueCurve
    bl1: Optional[Boundary] = None
    band: Optional[BandPremium] = field(default=None, repr=False)
    induction: Optional[BandInduction] = field(default=None, repr=False)

    def price(self, s: float, t: float) -> float:
        cap, params = self.cap, self.params
        if s <= cap.L1:
            return price_via_hitting(s, t, self.first_cap, params)
        if t >= self.T0 or self.band is None:
            return _c_zero_case_ii_price(s, t, params, cap)
        b = self.bl1.evaluate(t)
        if s <= b:
            return cap.L1 - params.K
        return float(self.band.value(s, t, self.induction.values, self.induction.edge_derivative, b)[0])


def solve_bl1_case_ii(
    params: MarketParams,
    grid: Optional[TimeGrid],
    T0: float,
    uncapped: UncappedSolution,
    *,
    cap: TwoLevelCap,
    first_cap: SingleCapSolution,
    curve: WaitingValueCurve,
    t0: Optional[float],
    assume_smooth_fit: bool = False,
    eps: Optional[float] = None,
) -> CaseIISolution:
    """Backward induction for B^{L,1} on [0, T0] with the first-cap price below L1."""
    if grid is None or T0 <= 0:
        logger.info("case II: T0=0, no band above L1")
        return CaseIISolution(params, cap, T0, t0, first_cap, curve)
    eps = eps or BOUNDARY_EPS_FACTOR * params.K
    L1 = cap.L1
    lo, hi = _log_range(L1, params, T0)
    extra = np.concatenate((_cluster(L1, 0.5 * params.sigma), _cluster(cap.L2, 0.5 * params.sigma)))
    below = tabulate(lambda x: price_via_hitting(x, T0, first_cap, params), lo, L1, TABULATION_POINTS, below=0.0, extra=extra)
    above = tabulate(lambda x: _c_zero_case_ii_price(x, T0, params, cap), L1, hi, TABULATION_POINTS, extra=extra)
    terminal = PiecewisePayoff((0.0, L1, math.inf), (below, above))
    band = BandPremium(
        params=params,
        cap=cap,
        T0=T0,
        grid=grid,
        terminal=terminal,
        sub_cap_derivative=first_cap.derivative_at(grid.nodes),
        sub_cap_derivative_T0=float(first_cap.derivative_at(T0)),
        edge_derivative_T0=0.0 if assume_smooth_fit else max(curve.slope_fn(T0), 0.0),
        floor=uncapped.boundary,
    )

    def top(t: float, residual: Callable[[float], float]) -> Optional[tuple[float, float]]:
        hi, f_hi = expand_upper(residual, 1.05 * L1, 100.0 * L1)
        if f_hi <= 0:
            return None
        return hi, f_hi

    induction = _band_induction(band, t0, top, assume_smooth_fit, eps, "B_L1")
    return CaseIISolution(params, cap, T0, t0, first_cap, curve, Boundary(grid, induction.values), band, induction)


# ---------------------------------------------------------------------------
# case III
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CaseIIISolution:
    params: MarketParams
    cap: TwoLevelCap
    singlecap: SingleCapSolution
    grid: TimeGrid
    terminal: PiecewisePayoff = field(repr=False)
    bl1: Boundary
    sub_cap_derivative: np.ndarray = field(repr=False)
    t_star1: float
    bl1_at_T1: float
    left_limit: float
    residuals: np.ndarray = field(repr=False)
    derivative_error: np.ndarray = field(repr=False)
    flagged: tuple[str, ...] = ()
    notes: tuple[str, ...] = ()

    def value(self, S, t: float, first: float, boundary_values=None, sub=None) -> np.ndarray:
        return _case_iii_value(
            S,
            t,
            self.grid,
            self.bl1.values if boundary_values is None else boundary_values,
            self.sub_cap_derivative if sub is None else sub,
            self.terminal,
            self.params,
            self.cap,
            first,
        )

    def price(self, s: float, t: float) -> float:
        cap, params = self.cap, self.params
        if t >= cap.T1:
            return float(self.terminal(np.array([s]))[0])
        if s >= cap.L1:
            return cap.L1 - params.K
        b = self.bl1.evaluate(t)
        if s >= b:
            return s - params.K
        return float(self.value(s, t, b)[0])


def _case_iii_value(S, t, grid, boundary_values, sub, terminal, params, cap, first) -> np.ndarray:
    L1 = cap.L1
    n = grid.n_steps
    times, lower = _path(grid, cap.T1, t, boundary_values, boundary_values[n], first)
    _, deriv = _path(grid, cap.T1, t, sub, sub[n])
    flat = np.full(times.size, L1)
    terms = PremiumTerms(
        dividend=(DividendBand(lower, flat),),
        occupancy=(OccupancyBand(flat, np.full(times.size, np.inf), params.r * (L1 - params.K)),),
        local_time=(LocalTimeTerm(flat, deriv, 0.5),),
    )
    european = np.atleast_1d(discounted_expectation(S, t, cap.T1, terminal, params))
    return european + discounted_premium(S, t, times, params, terms)


def case_iii_terminal(params: MarketParams, cap: TwoLevelCap, singlecap: SingleCapSolution, b_star: float) -> PiecewisePayoff:
    """Payoff just before T1: the L2-capped price below min(L2, B(T1)), S^L1 - K above."""
    lo, _ = _log_range(b_star, params, cap.T1)
    extra = _cluster(b_star, 0.5 * params.sigma)
    below = tabulate(lambda x: price_via_hitting(x, cap.T1, singlecap, params), lo, b_star, TABULATION_POINTS, below=0.0, extra=extra)

    def exercise(x):
        return np.asarray(x, dtype=float) - params.K

    def capped(x):
        return np.full(np.shape(x), cap.L1 - params.K)

    return PiecewisePayoff((0.0, b_star, cap.L1, math.inf), (below, exercise, capped))


def solve_bl1_case_iii(
    params: MarketParams,
    grid: TimeGrid,
    uncapped: UncappedSolution,
    singlecap: SingleCapSolution,
    *,
    cap: TwoLevelCap,
    eps: Optional[float] = None,
) -> CaseIIISolution:
    """Non-increasing B^{L,1} on [0, T1) by backward induction from its left limit at T1."""
    L1, K = cap.L1, params.K
    eps = eps or CAP_EPS_FACTOR * L1
    B_T1 = uncapped.boundary.evaluate(cap.T1)
    b_star = min(cap.L2, B_T1)
    left = min(max(params.dividend_threshold, b_star), L1)
    floor = min(params.dividend_threshold, L1)
    terminal = case_iii_terminal(params, cap, singlecap, b_star)
    nodes = grid.nodes
    n = grid.n_steps
    values = np.full(n + 1, np.nan)
    values[n] = left
    sub = np.ones(n + 1)
    errors = np.zeros(n + 1)
    residuals = np.zeros(n + 1)
    flagged: list[str] = []
    xtol = root_tolerance(K)
    touch = TOUCH_TOL * K
    logger.info("case III: B^{L,1}(T1-)=%.8g, B^{L,1}(T1)=%.8g", left, b_star)

    def residual_at(b: float, t: float) -> float:
        value = float(_case_iii_value(b, t, grid, values, sub, terminal, params, cap, b)[0])
        return min(b, L1) - K - value

    for i in range(n - 1, -1, -1):
        t = nodes[i]

        def residual(b: float, t=t) -> float:
            return residual_at(b, t)

        def touching(b: float, t=t) -> float:
            return residual_at(b, t) + touch

        lo = values[i + 1]
        f_top = residual(L1) if lo < L1 else -math.inf
        if f_top < -touch:
            values[i] = L1
        else:
            f_lo = residual(lo)
            if f_lo >= -touch:
                values[i] = lo
                if f_lo > touch:
                    _hold_later_value(residual, floor, lo, f_lo, xtol, i, t, K, flagged)
            else:
                values[i] = bracketed_root(touching, lo, L1, xtol, node=i, f_lo=f_lo + touch, f_hi=f_top + touch)
        residuals[i] = abs(residual(values[i])) if values[i] < L1 else 0.0
        if values[i] >= L1:
            base = float(_case_iii_value(L1, t, grid, values, sub, terminal, params, cap, L1)[0])

            def below(s: float, t=t) -> float:
                return float(_case_iii_value(s, t, grid, values, sub, terminal, params, cap, L1)[0])

            full = (base - below(L1 - eps)) / eps
            half = (base - below(L1 - 0.5 * eps)) / (0.5 * eps)
            sub[i] = min(max(full, np.finfo(float).tiny), 1.0)
            errors[i] = abs(full - half)
        if residuals[i] > 2.0 * touch:
            flagged.append(f"B_L1[{i}] t={t:.6g} residual {residuals[i]:.3e}")
        logger.debug("case III node %d t=%.6g B=%.10g", i, t, values[i])

    t_star1 = _case_iii_cap_time(values, grid, L1, lambda s: residual_at(L1, s) + touch)
    for item in flagged:
        logger.warning(item)
    logger.info("case III: t*1=%.8g", t_star1)
    return CaseIIISolution(
        params=params,
        cap=cap,
        singlecap=singlecap,
        grid=grid,
        terminal=terminal,
        bl1=Boundary(grid, values),
        sub_cap_derivative=sub,
        t_star1=t_star1,
        bl1_at_T1=b_star,
        left_limit=left,
        residuals=residuals,
        derivative_error=errors,
        flagged=tuple(flagged),
    )


def _hold_later_value(
    residual: Callable[[float], float],
    floor: float,
    lo: float,
    f_lo: float,
    xtol: float,
    node: int,
    t: float,
    K: float,
    flagged: list[str],
) -> None:
    """Record a node kept at the later value although exercise pays there; search down to floor for the root."""
    if f_lo > GROSS_RISE * K:
        raise MonotonicityError(
            f"B^{{L,1}} increases at t={t:.6g}: residual {f_lo:.3e} at the later value {lo:.8g}; refine the grid",
            node=node,
            bracket=(floor, float(lo)),
        )
    touch = TOUCH_TOL * K
    drop = floor
    upper, f_upper = lo, f_lo
    for point in np.linspace(lo, floor, 9)[1:] if floor < lo else ():
        f_point = residual(float(point))
        if f_point < -touch:
            drop = bracketed_root(
                lambda b: residual(b) + touch,
                float(point),
                upper,
                xtol,
                node=node,
                f_lo=f_point + touch,
                f_hi=f_upper + touch,
            )
            break
        upper, f_upper = float(point), f_point
    flagged.append(
        f"B_L1[{node}] t={t:.6g} held at the later value {lo:.8g} (residual {f_lo:.3e}, root near {drop:.8g})"
    )


def _case_iii_cap_time(values: np.ndarray, grid: TimeGrid, L1: float, gap: Callable[[float], float]) -> float:
    """Last time B^{L,1} equals L1, refined between grid nodes by the sign of gap(t); 0 if it never does."""
    capped = np.nonzero(values >= L1)[0]
    if capped.size == 0:
        return 0.0
    i = int(capped[-1])
    nodes = grid.nodes
    if i == grid.n_steps:
        return float(nodes[i])
    a, b = nodes[i], nodes[i + 1]
    f_a = gap(a)
    f_b = gap(b)
    try:
        return bracketed_root(gap, a, b, TIME_ROOT_TOL, node=i, f_lo=f_a, f_hi=f_b)
    except BracketError:
        if (f_a < 0) != (f_b < 0) and f_a != f_b:
            return float(a + (b - a) * f_a / (f_a - f_b))
        return float(a)


# ---------------------------------------------------------------------------
# pricing
# ---------------------------------------------------------------------------


CaseSolution = Union[CaseISolution, CaseIISolution, CaseIIISolution]


@dataclass(frozen=True, eq=False)
class TwoLevelEngine:
    second_cap: SingleCapSolution
    case_solution: Optional[CaseSolution] = None


def price_two_level(S, t: float, report, params: MarketParams):
    """Two-level capped call price at (S, t) from a solved report."""
    engine: TwoLevelEngine = report.engine
    cap: TwoLevelCap = report.cap
    S_arr = np.atleast_1d(np.asarray(S, dtype=float))
    out = np.empty_like(S_arr)
    for k, s in enumerate(S_arr):
        solution = engine.case_solution
        if solution is None or t > cap.T1 or (t == cap.T1 and not isinstance(solution, CaseIIISolution)):
            out[k] = price_via_hitting(s, t, engine.second_cap, params)
        else:
            out[k] = solution.price(float(s), t)
    if np.ndim(S) == 0:
        return float(out[0])
    return out
