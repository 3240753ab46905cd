"""Constant-cap American call: the capped boundary, t*, the hitting-time price,
the local-time premium price and the left derivative at the cap."""

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from utils.config import (
    CAP_EPS_FACTOR,
    RESIDUAL_FLAG,
    SIMPSON_PANELS,
    SINGLE_CAP_STEPS,
    TABULATION_POINTS,
    TAIL_STDEVS,
    TIME_ROOT_TOL,
)
from utils.logger import get_logger

from .analytic import (
    discounted_hit_before,
    european_capped_call,
    expected_local_time_regular,
    killed_expectation,
)
from .model import Boundary, MarketParams, TimeGrid, TwoLevelCap
from .numerics import bracketed_root, sqrt_time_points, sqrt_time_points_singular, tabulate
from .premium import band_moments_grid
from .uncapped import UncappedSolution, integral_equation_residual, uncapped_price

logger = get_logger("singlecap")


@dataclass(frozen=True, eq=False)
class SingleCapSolution:
    uncapped: UncappedSolution
    level: float
    t_from: float
    grid: TimeGrid
    bl2: Boundary
    t_star: float
    cap_derivative: Optional[np.ndarray] = field(default=None, repr=False)
    derivative_error: Optional[np.ndarray] = field(default=None, repr=False)
    continuation: Optional[Callable] = field(default=None, repr=False)

    @property
    def maturity(self) -> float:
        return self.grid.t_end

    def derivative_at(self, u) -> np.ndarray:
        """C_S(L-, u) interpolated linearly between grid nodes; 1 from t* on."""
        u = np.asarray(u, dtype=float)
        values = np.interp(u, self.grid.nodes, self.cap_derivative)
        return np.where(u >= self.t_star, 1.0, values)


@dataclass(frozen=True)
class LocalTimeDecomposition:
    european: float
    cap_occupancy: float
    dividend_band: float
    local_time: float

    @property
    def total(self) -> float:
        return self.european + self.cap_occupancy + self.dividend_band + self.local_time


def last_time_above(boundary: Boundary, level: float, a: float, b: float) -> Optional[float]:
    """sup{s in [a, b]: B(s) > level} for a non-increasing B; None if the set is empty."""
    if boundary.evaluate(b) > level:
        return b
    if not boundary.evaluate(a) > level:
        return None
    nodes = boundary.nodes
    inside = nodes[(nodes > a) & (nodes < b)]
    points = np.concatenate(([a], inside, [b]))
    values = boundary.evaluate_many(points)
    j = int(np.nonzero(values > level)[0][-1])
    lo, hi = points[j], points[j + 1]
    if math.isinf(values[j]):
        return float(lo)
    return bracketed_root(lambda s: boundary.evaluate(s) - level, lo, hi, TIME_ROOT_TOL)


def compute_t_star(uncapped: Boundary, cap: TwoLevelCap) -> float:
    """Last time the uncapped boundary sits above the cap schedule, 0 if it never does."""
    late = last_time_above(uncapped, cap.L2, cap.T1, cap.T2)
    if late is not None:
        return late
    if uncapped.evaluate(cap.T1) > cap.L1:
        return cap.T1
    early = last_time_above(uncapped, cap.L1, 0.0, cap.T1)
    return 0.0 if early is None else early


def capped_boundary(uncapped: Boundary, level: float, t_from: float, t_end: float, n_steps: int) -> Boundary:
    grid = TimeGrid(t_from, t_end, n_steps)
    return Boundary(grid, np.minimum(uncapped.evaluate_many(grid.nodes), level))


def _terminal_payoff(params: MarketParams):
    def payoff(x):
        return np.maximum(np.asarray(x, dtype=float) - params.K, 0.0)

    payoff.kinks = (params.K,)
    return payoff


def _continuation_at_t_star(uncapped: UncappedSolution, level: float, t_star: float, params: MarketParams):
    """G(x) = C^A(x, t*) on (0, level), tabulated; the terminal payoff when t* is maturity."""
    T = uncapped.maturity
    if t_star >= T:
        return _terminal_payoff(params)
    lo = level * math.exp(-TAIL_STDEVS * params.sigma * math.sqrt(T - t_star) - 1.0)
    table = tabulate(lambda x: uncapped_price(x, t_star, uncapped, params), lo, level, TABULATION_POINTS, below=0.0)
    table.kinks = ()
    return table


def solve_single_cap(
    uncapped: UncappedSolution,
    level: float,
    params: MarketParams,
    t_from: float = 0.0,
    n_steps: Optional[int] = None,
    eps: Optional[float] = None,
) -> SingleCapSolution:
    """Capped boundary, t*, continuation payoff and cap derivative for a constant cap on [t_from, T2]."""
    T = uncapped.maturity
    steps = n_steps or SINGLE_CAP_STEPS
    above = last_time_above(uncapped.boundary, level, 0.0, T)
    t_star = 0.0 if above is None else above
    logger.info("single cap L=%.6g: t*=%.8g", level, t_star)
    solution = SingleCapSolution(
        uncapped=uncapped,
        level=level,
        t_from=t_from,
        grid=TimeGrid(t_from, T, steps),
        bl2=capped_boundary(uncapped.boundary, level, t_from, T, steps),
        t_star=t_star,
        continuation=_continuation_at_t_star(uncapped, level, t_star, params),
    )
    values, errors = estimate_cap_derivative(solution, params, eps)
    return replace(solution, cap_derivative=values, derivative_error=errors)


def price_via_hitting(S, t: float, solution: SingleCapSolution, params: MarketParams):
    """Hit the cap before t* or hold the uncapped option from t* on."""
    L = solution.level
    S_arr = np.atleast_1d(np.asarray(S, dtype=float))
    out = np.empty_like(S_arr)
    for k, s in enumerate(S_arr):
        if s >= L:
            out[k] = L - params.K
        elif t >= solution.t_star:
            out[k] = uncapped_price(s, t, solution.uncapped, params)
        else:
            hit = float(discounted_hit_before(s, L, t, solution.t_star, params))
            out[k] = (L - params.K) * hit + killed_expectation(
                s, L, t, solution.t_star, params, solution.continuation, breakpoints=(params.K,)
            )
    if np.ndim(S) == 0:
        return float(out[0])
    return out


def estimate_cap_derivative(
    solution: SingleCapSolution, params: MarketParams, eps: Optional[float] = None
) -> tuple[np.ndarray, np.ndarray]:
    """One-sided C_S(L-, t) per grid node with an eps/2 Richardson error estimate."""
    L = solution.level
    eps = eps or CAP_EPS_FACTOR * L
    nodes = solution.grid.nodes
    values = np.ones(nodes.size)
    errors = np.zeros(nodes.size)
    payoff = L - params.K
    for i, t in enumerate(nodes):
        if t >= solution.t_star:
            continue
        d_full = (payoff - price_via_hitting(L - eps, t, solution, params)) / eps
        d_half = (payoff - price_via_hitting(L - 0.5 * eps, t, solution, params)) / (0.5 * eps)
        values[i] = d_full
        errors[i] = abs(d_full - d_half)
    values = np.clip(values, np.finfo(float).tiny, 1.0)
    logger.info("cap derivative at L=%.6g: min %.6g, max Richardson error %.3e", L, values.min(), errors.max())
    return values, errors


def _split(a: float, b: float, cut: float) -> list[tuple[float, float]]:
    if a < cut < b:
        return [(a, cut), (cut, b)]
    return [(a, b)]


def premium_components(
    S, t: float, solution: SingleCapSolution, params: MarketParams, t_begin: Optional[float] = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cap occupancy, dividend band and local-time integrals over [t_begin, T2] (default t), per S."""
    S = np.atleast_1d(np.asarray(S, dtype=float))
    L = solution.level
    K, r = params.K, params.r
    T = solution.maturity
    a = t if t_begin is None else t_begin
    occupancy = np.zeros_like(S)
    dividend = np.zeros_like(S)
    local = np.zeros_like(S)
    if a >= T:
        return occupancy, dividend, local
    B = solution.uncapped.boundary

    for lo, hi in _split(a, T, solution.t_star):
        u, weights = sqrt_time_points(t, lo, hi, SIMPSON_PANELS)
        keep = u > t
        u, weights = u[keep], weights[keep]
        tau = u - t
        prob, _ = band_moments_grid(S, np.full(u.size, L), np.full(u.size, np.inf), tau, params)
        occupancy += r * (L - K) * (prob @ weights)
        lower = np.minimum(B.evaluate_many(u), L)
        _, moment = band_moments_grid(S, lower, np.full(u.size, L), tau, params)
        dividend += moment @ weights

        u, _, weights = sqrt_time_points_singular(t, lo, hi, SIMPSON_PANELS)
        g = expected_local_time_regular(S[:, None], np.full((1, u.size), L), t, u[None, :], params)
        g = g * (np.exp(-r * (u - t)) * solution.derivative_at(u))[None, :]
        local += 0.5 * (g @ weights)

    return occupancy, dividend, local


def local_time_decomposition(
    S: float, t: float, solution: SingleCapSolution, params: MarketParams
) -> LocalTimeDecomposition:
    european = float(european_capped_call(S, t, solution.level, solution.maturity, params))
    occupancy, dividend, local = premium_components(S, t, solution, params)
    return LocalTimeDecomposition(european, float(occupancy[0]), float(dividend[0]), float(local[0]))


def price_via_local_time(S, t: float, solution: SingleCapSolution, params: MarketParams):
    """Capped call price as European capped value plus the local-time early-exercise premium."""
    european = np.asarray(european_capped_call(S, t, solution.level, solution.maturity, params), dtype=float)
    total = european + sum(premium_components(S, t, solution, params))
    if np.ndim(S) == 0:
        return float(total[0])
    return total


def verify_bl2_integral_equation(solution: SingleCapSolution, params: MarketParams, t_from: Optional[float] = None) -> float:
    """Max |residual| of the uncapped integral equation at B^{L,2} nodes in [max(t*, t_from), T2]."""
    if params.delta == 0:
        logger.info("delta = 0: capped boundary integral equation check skipped")
        return 0.0
    start = max(solution.t_star, solution.t_from if t_from is None else t_from)
    uncapped = solution.uncapped
    worst = 0.0
    for i, t in enumerate(uncapped.grid.nodes):
        if t < start - 1e-12:
            continue
        worst = max(worst, abs(integral_equation_residual(uncapped, params, i)))
    if worst > RESIDUAL_FLAG * params.K:
        logger.warning("capped boundary integral equation residual %.3e", worst)
    return worst
