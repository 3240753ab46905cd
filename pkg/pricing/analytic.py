"""Closed-form building blocks under GBM with continuous dividend yield.

All functions accept scalar or array S and return numpy values of the same
shape unless stated otherwise.
"""

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.special import log_ndtr, ndtr

from utils.config import GAUSS_NODES, QUAD_TOL, TAIL_STDEVS
from utils.logger import get_logger

from .model import MarketParams
from .numerics import SQRT_2PI, QuadratureError, payoff_breakpoints

logger = get_logger("analytic")

_UNDERFLOW = 1e-300


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / SQRT_2PI


def norm_cdf(x):
    return ndtr(np.asarray(x, dtype=float))


def _as_array(S) -> np.ndarray:
    return np.asarray(S, dtype=float)


def _scalar_or_array(value: np.ndarray, like):
    if np.ndim(like) == 0:
        return float(value)
    return value


def tail_probability(S, x, tau: float, params: MarketParams):
    """P(S_tau >= x | S_0 = S); at tau = 0 ties count one half."""
    S = _as_array(S)
    x = np.asarray(x, dtype=float)
    if tau <= 0:
        return np.where(S > x, 1.0, np.where(S == x, 0.5, 0.0))
    vol = params.sigma * math.sqrt(tau)
    with np.errstate(divide="ignore"):
        d2 = (np.log(S / x) + params.mu * tau) / vol
    return ndtr(d2)


def tail_first_moment(S, x, tau: float, params: MarketParams):
    """E[S_tau 1{S_tau >= x} | S_0 = S]."""
    S = _as_array(S)
    x = np.asarray(x, dtype=float)
    if tau <= 0:
        return S * np.where(S > x, 1.0, np.where(S == x, 0.5, 0.0))
    vol = params.sigma * math.sqrt(tau)
    with np.errstate(divide="ignore"):
        d1 = (np.log(S / x) + (params.mu + params.sigma**2) * tau) / vol
    return S * math.exp((params.r - params.delta) * tau) * ndtr(d1)


def discounted_band_moments(S, lo, hi, tau: float, params: MarketParams):
    """Discounted P(lo < S_tau < hi) and discounted E[(delta S_tau - rK) 1{lo < S_tau < hi}]."""
    lo = np.asarray(lo, dtype=float)
    hi = np.maximum(np.asarray(hi, dtype=float), lo)
    prob = tail_probability(S, lo, tau, params) - tail_probability(S, hi, tau, params)
    moment = tail_first_moment(S, lo, tau, params) - tail_first_moment(S, hi, tau, params)
    disc = math.exp(-params.r * tau)
    return disc * prob, disc * (params.delta * moment - params.r * params.K * prob)


def european_call(S, t: float, strike: float, maturity: float, params: MarketParams):
    S = _as_array(S)
    tau = maturity - t
    if tau <= 0:
        return _scalar_or_array(np.maximum(S - strike, 0.0), S)
    fwd = S * math.exp(-params.delta * tau)
    if strike <= 0:
        return _scalar_or_array(fwd - strike * math.exp(-params.r * tau), S)
    vol = params.sigma * math.sqrt(tau)
    with np.errstate(divide="ignore"):
        d1 = (np.log(S / strike) + (params.mu + params.sigma**2) * tau) / vol
    d2 = d1 - vol
    price = fwd * ndtr(d1) - strike * math.exp(-params.r * tau) * ndtr(d2)
    return _scalar_or_array(np.maximum(price, 0.0), S)


def european_capped_call(S, t: float, cap_level: float, maturity: float, params: MarketParams):
    """E_t[e^{-r(T-t)} (S_T ^ L - K)^+] as a call spread (L > K)."""
    if math.isinf(cap_level):
        return european_call(S, t, params.K, maturity, params)
    low = european_call(S, t, params.K, maturity, params)
    high = european_call(S, t, cap_level, maturity, params)
    return _scalar_or_array(np.maximum(np.asarray(low) - np.asarray(high), 0.0), S)


def instantaneous_waiting_benefit(S, level: float, params: MarketParams):
    """Drift of the discounted capped payoff: rK - delta*S on [K, level), -r(level-K) above, 0 below K."""
    S = _as_array(S)
    out = np.where(S >= level, -params.r * (level - params.K), params.r * params.K - params.delta * S)
    return _scalar_or_array(np.where(S < params.K, 0.0, out), S)


@dataclass(frozen=True)
class HittingParams:
    lam: float
    b: float
    f: float
    phi: float
    alpha: float

    @classmethod
    def build(cls, S: float, L: float, params: MarketParams) -> "HittingParams":
        b = -params.mu
        f = math.sqrt(b * b + 2.0 * params.r * params.sigma**2)
        return cls(lam=S / L, b=b, f=f, phi=0.5 * (b - f), alpha=0.5 * (b + f))


def discounted_hit_before(S, L: float, t: float, T: float, params: MarketParams):
    """E_t[e^{-r(tau_L - t)} 1{tau_L < T}] for the first passage of S through L."""
    S = _as_array(S)
    tau = T - t
    at_barrier = S == L
    if tau <= 0:
        return _scalar_or_array(np.where(at_barrier, 1.0, 0.0), S)
    hp = HittingParams.build(1.0, 1.0, params)
    sig2 = params.sigma**2
    sq = math.sqrt(tau)
    log_lam = np.log(S / L)
    d0 = (log_lam - hp.f * tau) / (params.sigma * sq)
    shift = 2.0 * hp.f * sq / params.sigma
    below = log_lam < 0
    with np.errstate(over="ignore", invalid="ignore"):
        first = np.where(
            below,
            2.0 * hp.phi / sig2 * log_lam + log_ndtr(d0),
            2.0 * hp.phi / sig2 * log_lam + log_ndtr(-d0),
        )
        second = np.where(
            below,
            2.0 * hp.alpha / sig2 * log_lam + log_ndtr(d0 + shift),
            2.0 * hp.alpha / sig2 * log_lam + log_ndtr(-d0 - shift),
        )
        value = np.exp(first) + np.exp(second)
    value = np.clip(np.where(at_barrier, 1.0, value), 0.0, 1.0)
    return _scalar_or_array(value, S)


def perpetual_hit_value(S, L: float, params: MarketParams):
    """Limit of discounted_hit_before as T -> infinity."""
    S = _as_array(S)
    hp = HittingParams.build(1.0, 1.0, params)
    lam = S / L
    sig2 = params.sigma**2
    value = np.where(lam <= 1.0, lam ** (2.0 * hp.alpha / sig2), lam ** (2.0 * hp.phi / sig2))
    return _scalar_or_array(value, S)


def killed_density_log(y, S: float, L: float, tau: float, params: MarketParams):
    """Density in y = log(x/L) of S_T on the side of S, killed at L (times x, i.e. x*u(x))."""
    y = np.asarray(y, dtype=float)
    log_lam = math.log(S / L)
    vol = params.sigma * math.sqrt(tau)
    b = -params.mu
    d_minus = (-log_lam + y + b * tau) / vol
    d_plus = (log_lam + y + b * tau) / vol
    k = 1.0 - 2.0 * (params.r - params.delta) / params.sigma**2
    with np.errstate(over="ignore"):
        image = np.exp(k * log_lam - 0.5 * d_plus * d_plus) / SQRT_2PI
    dens = (norm_pdf(d_minus) - image) / vol
    return np.maximum(dens, 0.0)


def killed_density(x, S: float, L: float, t: float, T: float, params: MarketParams):
    """u(x, t, T): density of S_T on paths that never reach L."""
    x = np.asarray(x, dtype=float)
    y = np.log(x / L)
    on_side = (y < 0) if S < L else (y > 0)
    return np.where(on_side, killed_density_log(y, S, L, T - t, params) / x, 0.0)


def killed_expectation(
    S: float,
    L: float,
    t: float,
    T: float,
    params: MarketParams,
    G: Callable,
    breakpoints: Sequence[float] = (),
    tol: float = QUAD_TOL,
) -> float:
    """E_t[e^{-r(tau_L ^ T - t)} G(S_T) 1{tau_L >= T}] by adaptive quadrature in log price."""
    S = float(S)
    tau = T - t
    if S == L:
        return 0.0
    if tau <= 0:
        return float(G(np.array([S]))[0])
    vol = params.sigma * math.sqrt(tau)
    centre = math.log(S / L) + params.mu * tau
    span = TAIL_STDEVS * vol
    if S < L:
        lo, hi = centre - span, 0.0
    else:
        lo, hi = 0.0, centre + span
    if hi <= lo:
        return 0.0

    def integrand(y: float) -> float:
        x = L * math.exp(y)
        return float(G(np.array([x]))[0]) * float(killed_density_log(y, S, L, tau, params))

    points = [math.log(p / L) for p in payoff_breakpoints(G, (S, *breakpoints)) if lo < math.log(p / L) < hi]
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            value, abserr = quad(integrand, lo, hi, points=points or None, epsabs=tol * 1e-2, epsrel=tol, limit=200)
        except IntegrationWarning:
            value, abserr = quad(integrand, lo, hi, points=points or None, epsabs=tol * 1e-2, epsrel=tol, limit=1000)
    if abserr > 100.0 * max(tol * abs(value), tol):
        raise QuadratureError(f"killed expectation did not converge (error {abserr:.2e})", achieved=abserr)
    return math.exp(-params.r * tau) * value


def expected_local_time_regular(S, level, t: float, u, params: MarketParams):
    """sqrt(u - t) times the expected local-time density; bounded as u -> t."""
    S = _as_array(S)
    level = np.asarray(level, dtype=float)
    tau = np.asarray(u, dtype=float) - t
    sq = np.sqrt(np.maximum(tau, 0.0))
    finite = np.isfinite(level)
    lvl = np.where(finite, level, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = -(np.log(lvl / S) - params.mu * tau) / (params.sigma * sq)
    z = np.where(sq > 0, z, np.where(np.isclose(S, lvl, rtol=0.0, atol=0.0), 0.0, np.inf))
    value = norm_pdf(z) * params.sigma * lvl
    value = np.where(finite, value, 0.0)
    return np.where(value < _UNDERFLOW, 0.0, value)


def expected_local_time_weight(S, level: float, t: float, u, params: MarketParams):
    """d/du E_t[local time of S at level up to u], for u > t."""
    tau = np.asarray(u, dtype=float) - t
    if np.any(tau <= 0):
        raise ValueError("local-time weight requires u > t")
    value = expected_local_time_regular(S, level, t, u, params) / np.sqrt(tau)
    value = np.where(value < _UNDERFLOW, 0.0, value)
    return _scalar_or_array(value, S) if np.ndim(u) == 0 else value


def auto_exercise_price(S: float, t: float, L2: float, T2: float, params: MarketParams) -> float:
    """Capped call exercised automatically the first time S reaches L2."""
    if S >= L2:
        return L2 - params.K
    if t >= T2:
        return max(min(S, L2) - params.K, 0.0)

    def payoff(x):
        return np.maximum(np.asarray(x, dtype=float) - params.K, 0.0)

    payoff.kinks = (params.K,)
    hit = float(discounted_hit_before(S, L2, t, T2, params))
    return (L2 - params.K) * hit + killed_expectation(S, L2, t, T2, params, payoff)


_GAUSS_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _GAUSS_CACHE:
        _GAUSS_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GAUSS_CACHE[n]


def discounted_expectation(
    S,
    t: float,
    T: float,
    payoff: Callable,
    params: MarketParams,
    n_nodes: int = GAUSS_NODES,
    extra_breakpoints: Optional[Sequence[float]] = None,
):
    """e^{-r(T-t)} E_t[payoff(S_T)] by Gauss-Legendre in the standard normal variable, split at payoff kinks."""
    S_arr = np.atleast_1d(_as_array(S))
    tau = T - t
    if tau <= 0:
        out = np.asarray(payoff(S_arr), dtype=float)
        return _scalar_or_array(out, S) if np.ndim(S) else float(out[0])
    vol = params.sigma * math.sqrt(tau)
    kinks = payoff_breakpoints(payoff, extra_breakpoints or ())
    xg, wg = _gauss_legendre(n_nodes)
    disc = math.exp(-params.r * tau)
    out = np.empty_like(S_arr)
    for i, s in enumerate(S_arr):
        centre = math.log(s) + params.mu * tau
        cuts = [(math.log(k) - centre) / vol for k in kinks]
        edges = [-TAIL_STDEVS] + sorted(c for c in cuts if -TAIL_STDEVS < c < TAIL_STDEVS) + [TAIL_STDEVS]
        total = 0.0
        for a, b in zip(edges, edges[1:]):
            z = 0.5 * (b - a) * xg + 0.5 * (b + a)
            x = np.exp(centre + vol * z)
            total += 0.5 * (b - a) * float(np.dot(wg, np.asarray(payoff(x), dtype=float) * norm_pdf(z)))
        out[i] = disc * total
    if np.ndim(S) == 0:
        return float(out[0])
    return out
