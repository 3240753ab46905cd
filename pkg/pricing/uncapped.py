import math
from dataclasses import dataclass, field

import numpy as np

from utils.config import RESIDUAL_FLAG
from utils.logger import get_logger

from .analytic import european_call
from .model import Boundary, MarketParams, TimeGrid
from .numerics import BracketError, bracketed_root, expand_upper, root_tolerance
from .premium import DividendBand, PremiumTerms, discounted_premium

logger = get_logger("uncapped")


@dataclass(frozen=True, eq=False)
class UncappedSolution:
    boundary: Boundary
    grid: TimeGrid
    residuals: np.ndarray = field(repr=False, default=None)
    clamped_nodes: tuple[int, ...] = ()

    @property
    def maturity(self) -> float:
        return self.grid.t_end


def terminal_boundary(params: MarketParams) -> float:
    return max(params.K, params.dividend_threshold)


def _premium_terms(later_values: np.ndarray) -> PremiumTerms:
    lower = np.array(later_values, dtype=float)
    lower[0] = np.nan
    return PremiumTerms(dividend=(DividendBand(lower, np.full(lower.size, np.inf)),))


def _node_residual(b: float, t: float, nodes: np.ndarray, terms: PremiumTerms, params: MarketParams, T: float) -> float:
    value = european_call(b, t, params.K, T, params) + discounted_premium(b, t, nodes, params, terms.with_first(b))[0]
    return b - params.K - float(value)


def solve_uncapped_boundary(params: MarketParams, grid: TimeGrid) -> UncappedSolution:
    """Backward induction on the early-exercise-premium integral equation of the American call."""
    n = grid.n_steps
    if params.delta == 0:
        logger.info("delta = 0: the uncapped call is never exercised early")
        return UncappedSolution(Boundary.infinite(grid), grid, residuals=np.zeros(n + 1))

    nodes = grid.nodes
    T = grid.t_end
    values = np.empty(n + 1)
    values[n] = terminal_boundary(params)
    residuals = np.zeros(n + 1)
    clamped: list[int] = []
    ceiling = 1000.0 * values[n]
    xtol = root_tolerance(params.K)
    logger.info("solving uncapped boundary on [%.6g, %.6g] with %d steps", grid.t_start, T, n)

    for i in range(n - 1, -1, -1):
        t = nodes[i]
        sub = nodes[i:]
        terms = _premium_terms(values[i:])

        def residual(b: float) -> float:
            return _node_residual(b, t, sub, terms, params, T)

        lo = values[i + 1]
        f_lo = residual(lo)
        if f_lo >= 0:
            values[i] = lo
            residuals[i] = abs(f_lo)
            clamped.append(i)
            logger.debug("node %d: residual %.3e at previous value, boundary held", i, f_lo)
            continue
        hi, f_hi = expand_upper(residual, max(10.0 * values[n], 1.5 * lo), ceiling)
        if f_hi <= 0:
            raise BracketError(
                f"uncapped boundary not bracketed at t={t:.6g}", node=i, bracket=(float(lo), float(hi))
            )
        values[i] = bracketed_root(residual, lo, hi, xtol, node=i, f_lo=f_lo, f_hi=f_hi)
        residuals[i] = abs(residual(values[i]))
        logger.debug("node %d t=%.6g B=%.10g", i, t, values[i])

    worst = float(residuals.max())
    if worst > RESIDUAL_FLAG * params.K:
        logger.warning("uncapped boundary: max node residual %.3e", worst)
    if clamped:
        logger.info("uncapped boundary held at %d node(s) to stay non-increasing", len(clamped))
    logger.info("uncapped boundary: B(%.4g)=%.8g, B(%.4g)=%.8g", grid.t_start, values[0], T, values[n])
    return UncappedSolution(Boundary(grid, values), grid, residuals=residuals, clamped_nodes=tuple(clamped))


def uncapped_price(S, t: float, solution: UncappedSolution, params: MarketParams):
    """American call price by the early-exercise-premium representation; S - K in the exercise region."""
    S_arr = np.atleast_1d(np.asarray(S, dtype=float))
    T = solution.maturity
    if t >= T:
        out = np.maximum(S_arr - params.K, 0.0)
    else:
        out = np.asarray(european_call(S_arr, t, params.K, T, params), dtype=float)
        if params.delta > 0:
            nodes = solution.grid.nodes_after(t)
            lower = solution.boundary.evaluate_many(nodes)
            terms = PremiumTerms(dividend=(DividendBand(lower, np.full(lower.size, np.inf)),))
            out = out + discounted_premium(S_arr, t, nodes, params, terms)
            b = lower[0]
            if math.isfinite(b):
                out = np.where(S_arr >= b, S_arr - params.K, out)
    out = np.maximum(out, np.maximum(S_arr - params.K, 0.0))
    if np.ndim(S) == 0:
        return float(out[0])
    return out


def integral_equation_residual(solution: UncappedSolution, params: MarketParams, index: int) -> float:
    """B(t) - K - C^E(B(t), t) - premium at one grid node; 0 where B is Infinite."""
    values = solution.boundary.values
    b = values[index]
    if not math.isfinite(b) or index == solution.grid.n_steps:
        return 0.0
    nodes = solution.grid.nodes
    terms = _premium_terms(values[index:])
    return _node_residual(b, nodes[index], nodes[index:], terms, params, solution.maturity)
