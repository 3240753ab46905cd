"""Early-exercise premium integrals over a backward-induction time grid.

Every premium the solvers need is a sum of three kinds of discounted time
integrals from t to the end of a node list:

* dividend band: E[(delta S_v - rK) 1{lo(v) < S_v < hi(v)}]
* occupancy band: c * P(lo(v) < S_v < hi(v))
* local-time term: weight * D(v) * dE[local time at level(v)]

The first panel [t, v_1] is integrated in closed form with the levels frozen
at their values at t (the unknown, when solving) and the smooth factors taken
at v_1; later panels use the trapezoid rule for bands and product integration
against (v - t)^(-1/2) for local time.
"""

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .analytic import expected_local_time_regular
from .model import MarketParams
from .numerics import (
    first_panel_local_time,
    first_panel_occupancy,
    singular_trapezoid_weights,
    trapezoid_weights,
)


@dataclass(frozen=True, eq=False)
class DividendBand:
    lower: np.ndarray
    upper: np.ndarray


@dataclass(frozen=True, eq=False)
class OccupancyBand:
    lower: np.ndarray
    upper: np.ndarray
    coefficient: float


@dataclass(frozen=True, eq=False)
class LocalTimeTerm:
    level: np.ndarray
    derivative: np.ndarray
    weight: float = 0.5


@dataclass(frozen=True, eq=False)
class PremiumTerms:
    dividend: Sequence[DividendBand] = field(default_factory=tuple)
    occupancy: Sequence[OccupancyBand] = field(default_factory=tuple)
    local_time: Sequence[LocalTimeTerm] = field(default_factory=tuple)

    def with_first(self, value: float) -> "PremiumTerms":
        """Copy with every band edge and level that is NaN at the first node replaced by value."""

        def fill(arr):
            arr = np.array(arr, dtype=float)
            if np.isnan(arr[0]):
                arr[0] = value
            return arr

        return PremiumTerms(
            dividend=tuple(DividendBand(fill(b.lower), fill(b.upper)) for b in self.dividend),
            occupancy=tuple(OccupancyBand(fill(b.lower), fill(b.upper), b.coefficient) for b in self.occupancy),
            local_time=tuple(LocalTimeTerm(fill(l.level), l.derivative, l.weight) for l in self.local_time),
        )


def _tails(S: np.ndarray, x: np.ndarray, tau: np.ndarray, params: MarketParams) -> tuple[np.ndarray, np.ndarray]:
    """P(S_tau >= x) and E[S_tau 1{S_tau >= x}] on an (m, k) grid; tau > 0."""
    vol = params.sigma * np.sqrt(tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        logm = np.log(S / x)
    d2 = (logm + params.mu * tau) / vol
    d2 = np.where(np.isnan(d2), -np.inf, d2)
    prob = ndtr(d2)
    moment = S * np.exp((params.r - params.delta) * tau) * ndtr(d2 + vol)
    return prob, moment


def band_moments_grid(S, lower, upper, tau, params: MarketParams) -> tuple[np.ndarray, np.ndarray]:
    """Discounted probability and discounted (delta S - rK) moment of each band, shape (len(S), len(tau))."""
    S = np.atleast_1d(np.asarray(S, dtype=float))[:, None]
    tau = np.asarray(tau, dtype=float)[None, :]
    lo = np.asarray(lower, dtype=float)[None, :]
    hi = np.maximum(np.asarray(upper, dtype=float)[None, :], lo)
    p_lo, m_lo = _tails(S, lo, tau, params)
    p_hi, m_hi = _tails(S, hi, tau, params)
    disc = np.exp(-params.r * tau)
    prob = p_lo - p_hi
    return disc * prob, disc * (params.delta * (m_lo - m_hi) - params.r * params.K * prob)


def _log_ratio(S: np.ndarray, level: float, sigma: float) -> np.ndarray:
    """log(S / level) / sigma; +inf for level 0 and -inf for level +inf."""
    if level <= 0:
        return np.full_like(S, np.inf)
    if math.isinf(level):
        return np.full_like(S, -np.inf)
    return np.log(S / level) / sigma


def _band_first_panel(S: np.ndarray, lo: float, hi: float, h: float, sigma: float) -> np.ndarray:
    if not hi > lo:
        return np.zeros_like(S)
    return first_panel_occupancy(_log_ratio(S, lo, sigma), h) - first_panel_occupancy(_log_ratio(S, hi, sigma), h)


def discounted_premium(S, t: float, nodes, params: MarketParams, terms: PremiumTerms) -> np.ndarray:
    """Sum of the premium integrals on [t, nodes[-1]]; term arrays are sampled on nodes, nodes[0] == t."""
    S = np.atleast_1d(np.asarray(S, dtype=float))
    nodes = np.asarray(nodes, dtype=float)
    total = np.zeros_like(S)
    if nodes.size < 2:
        return total
    later = nodes[1:] - t
    h = later[0]
    trap = trapezoid_weights(later)
    sing = singular_trapezoid_weights(later)
    r, delta, K, sigma = params.r, params.delta, params.K, params.sigma
    half_disc = math.exp(-0.5 * r * h)

    for band in terms.dividend:
        lo = np.asarray(band.lower, dtype=float)
        hi = np.asarray(band.upper, dtype=float)
        if later.size > 1:
            _, moment = band_moments_grid(S, lo[1:], hi[1:], later, params)
            total += moment @ trap
        occ = _band_first_panel(S, lo[0], hi[0], h, sigma)
        total += (delta * S * math.exp(-0.5 * delta * h) - r * K * half_disc) * occ

    for band in terms.occupancy:
        lo = np.asarray(band.lower, dtype=float)
        hi = np.asarray(band.upper, dtype=float)
        if later.size > 1:
            prob, _ = band_moments_grid(S, lo[1:], hi[1:], later, params)
            total += band.coefficient * (prob @ trap)
        total += band.coefficient * half_disc * _band_first_panel(S, lo[0], hi[0], h, sigma)

    for term in terms.local_time:
        level = np.asarray(term.level, dtype=float)
        deriv = np.where(np.isfinite(level), np.asarray(term.derivative, dtype=float), 0.0)
        if later.size > 1:
            g = expected_local_time_regular(S[:, None], level[None, 1:], t, nodes[None, 1:], params)
            g = g * (np.exp(-r * later) * deriv[1:])[None, :]
            total += term.weight * (g @ sing)
        if math.isfinite(level[0]) and level[0] > 0:
            c = np.log(level[0] / S) / sigma
            total += term.weight * half_disc * deriv[1] * sigma * level[0] * first_panel_local_time(c, h)

    return total
