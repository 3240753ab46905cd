"""Shared numerical plumbing: solver errors, bracketed roots, singular-kernel
quadrature rules and tabulated payoffs."""

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq
from scipy.special import ndtr

from utils.config import ROOT_TOL, SIMPSON_PANELS

SQRT_2PI = math.sqrt(2.0 * math.pi)


class SolverError(RuntimeError):
    def __init__(
        self,
        message: str,
        step: Optional[str] = None,
        node: Optional[int] = None,
        bracket: Optional[tuple[float, float]] = None,
    ) -> None:
        super().__init__(message)
        self.step = step
        self.node = node
        self.bracket = bracket

    def with_step(self, step: str) -> "SolverError":
        if self.step is None:
            self.step = step
            self.args = (f"[{step}] {self.args[0]}",) + self.args[1:]
        return self


class BracketError(SolverError):
    pass


class MonotonicityError(SolverError):
    pass


class QuadratureError(RuntimeError):
    def __init__(self, message: str, achieved: float) -> None:
        super().__init__(message)
        self.achieved = achieved


def bracketed_root(
    fn: Callable[[float], float],
    lo: float,
    hi: float,
    xtol: float,
    node: Optional[int] = None,
    f_lo: Optional[float] = None,
    f_hi: Optional[float] = None,
) -> float:
    """Root of fn on [lo, hi]; the bracket must change sign."""
    f_lo = fn(lo) if f_lo is None else f_lo
    f_hi = fn(hi) if f_hi is None else f_hi
    if not (math.isfinite(f_lo) and math.isfinite(f_hi)):
        raise BracketError(f"non-finite residual on [{lo:.10g}, {hi:.10g}]", node=node, bracket=(lo, hi))
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if (f_lo > 0) == (f_hi > 0):
        raise BracketError(
            f"no sign change on [{lo:.10g}, {hi:.10g}] (f={f_lo:.3e}, {f_hi:.3e})", node=node, bracket=(lo, hi)
        )
    try:
        return brentq(fn, lo, hi, xtol=xtol, rtol=4.0 * np.finfo(float).eps, maxiter=200)
    except RuntimeError as exc:
        raise SolverError(str(exc), node=node, bracket=(lo, hi)) from exc


def largest_root(
    fn: Callable[[float], float],
    lo: float,
    hi: float,
    xtol: float,
    samples: int = 8,
    node: Optional[int] = None,
    f_lo: Optional[float] = None,
    f_hi: Optional[float] = None,
) -> Optional[float]:
    """Root of fn at its last rise through zero on [lo, hi], fn(hi) > 0.

    fn is sampled on `samples` log-spaced interior points; the bracket is the
    last sample with fn <= 0 and its right neighbour. None when no sample is
    non-positive.
    """
    points = np.geomspace(lo, hi, samples + 2)
    values = [fn(lo) if f_lo is None else f_lo]
    values += [fn(float(p)) for p in points[1:-1]]
    values.append(fn(hi) if f_hi is None else f_hi)
    if values[-1] <= 0:
        raise BracketError(f"residual not positive at {hi:.10g} (f={values[-1]:.3e})", node=node, bracket=(lo, hi))
    low = [k for k, v in enumerate(values) if v <= 0]
    if not low:
        return None
    k = low[-1]
    return bracketed_root(
        fn, float(points[k]), float(points[k + 1]), xtol, node=node, f_lo=values[k], f_hi=values[k + 1]
    )


def expand_upper(
    fn: Callable[[float], float],
    start: float,
    limit: float,
    factor: float = 1.5,
) -> tuple[float, float]:
    """Grow x from start until fn(x) > 0 or x passes limit; returns (x, fn(x))."""
    x = start
    fx = fn(x)
    while fx <= 0 and x < limit:
        x = min(x * factor, limit)
        fx = fn(x)
    return x, fx


def root_tolerance(scale: float) -> float:
    return ROOT_TOL * scale


def simpson_weights(n_panels: int) -> np.ndarray:
    if n_panels % 2:
        n_panels += 1
    w = np.ones(n_panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def sqrt_time_points(t: float, a: float, b: float, n_panels: int = SIMPSON_PANELS) -> tuple[np.ndarray, np.ndarray]:
    """Points u = t + w^2 and weights for int_a^b f(u) du = int 2w f(t+w^2) dw (composite Simpson in w)."""
    if n_panels % 2:
        n_panels += 1
    wa = math.sqrt(max(a - t, 0.0))
    wb = math.sqrt(max(b - t, 0.0))
    w = np.linspace(wa, wb, n_panels + 1)
    step = (wb - wa) / n_panels
    weights = simpson_weights(n_panels) * step * 2.0 * w
    return t + w * w, weights


def sqrt_time_points_singular(
    t: float, a: float, b: float, n_panels: int = SIMPSON_PANELS
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """As sqrt_time_points, for integrands g(u)/sqrt(u-t): returns (u, sqrt(u-t), weights for g)."""
    if n_panels % 2:
        n_panels += 1
    wa = math.sqrt(max(a - t, 0.0))
    wb = math.sqrt(max(b - t, 0.0))
    w = np.linspace(wa, wb, n_panels + 1)
    step = (wb - wa) / n_panels
    weights = simpson_weights(n_panels) * step * 2.0
    return t + w * w, w, weights


def first_panel_occupancy(c: np.ndarray, h: float) -> np.ndarray:
    """int_0^h Phi(c / sqrt(tau)) dtau in closed form; c may be +-inf."""
    c = np.asarray(c, dtype=float)
    sh = math.sqrt(h)
    out = np.where(c > 0, h, 0.0)
    finite = np.isfinite(c)
    if np.any(finite):
        cf = np.where(finite, c, 0.0)
        z = cf / sh
        az = np.abs(z)
        pdf = np.exp(-0.5 * z * z) / SQRT_2PI
        value = h * ndtr(z) + cf * sh * pdf - cf * np.abs(cf) * ndtr(-az)
        out = np.where(finite, value, out)
    return out


def first_panel_local_time(c: np.ndarray, h: float) -> np.ndarray:
    """int_0^h tau^(-1/2) phi(c / sqrt(tau)) dtau in closed form; zero for infinite c."""
    c = np.asarray(c, dtype=float)
    sh = math.sqrt(h)
    finite = np.isfinite(c)
    cf = np.where(finite, np.abs(c), 0.0)
    z = cf / sh
    value = 2.0 * (sh * np.exp(-0.5 * z * z) / SQRT_2PI - cf * ndtr(-z))
    return np.where(finite, np.maximum(value, 0.0), 0.0)


def trapezoid_weights(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    w = np.zeros_like(x)
    if x.size < 2:
        return w
    d = np.diff(x)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def singular_trapezoid_weights(tau: np.ndarray) -> np.ndarray:
    """Product-trapezoid weights for int g(tau) tau^(-1/2) dtau over [tau[0], tau[-1]], tau[0] > 0 allowed."""
    tau = np.asarray(tau, dtype=float)
    w = np.zeros_like(tau)
    if tau.size < 2:
        return w
    a = tau[:-1]
    b = tau[1:]
    sa, sb = np.sqrt(a), np.sqrt(b)
    i0 = 2.0 * (sb - sa)
    i1 = (2.0 / 3.0) * (b * sb - a * sa)
    width = b - a
    w[:-1] += (b * i0 - i1) / width
    w[1:] += (i1 - a * i0) / width
    return w


@dataclass(frozen=True)
class PiecewisePayoff:
    """Payoff on (0, inf) made of smooth pieces; pieces[k] applies on [edges[k], edges[k+1])."""

    edges: tuple[float, ...]
    pieces: tuple[Callable[[np.ndarray], np.ndarray], ...]

    def __post_init__(self) -> None:
        if len(self.edges) != len(self.pieces) + 1:
            raise ValueError("need one more edge than pieces")
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise ValueError("edges must be strictly increasing")

    @property
    def kinks(self) -> tuple[float, ...]:
        return tuple(e for e in self.edges[1:-1])

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for k, piece in enumerate(self.pieces):
            mask = (x >= self.edges[k]) & (x < self.edges[k + 1])
            if np.any(mask):
                out[mask] = piece(x[mask])
        return out


def tabulate(
    fn: Callable[[np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    n_points: int,
    below: Optional[float] = None,
    extra: Sequence[float] = (),
) -> Callable[[np.ndarray], np.ndarray]:
    """Cubic spline of fn in log x on [lo, hi]; flat beyond hi, `below` (or flat) under lo.

    `extra` adds abscissae inside (lo, hi), e.g. a cluster around a near-kink.
    """
    logs = np.linspace(math.log(lo), math.log(hi), n_points)
    inner = [math.log(x) for x in extra if lo < x < hi]
    if inner:
        logs = np.unique(np.concatenate((logs, inner)))
        logs = logs[np.concatenate(([True], np.diff(logs) > 1e-9))]
    xs = np.exp(logs)
    ys = np.asarray(fn(xs), dtype=float)
    spline = CubicSpline(np.log(xs), ys)
    lo_value = ys[0] if below is None else below

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        logx = np.log(np.clip(x, lo, hi))
        out = spline(logx)
        out = np.where(x > hi, ys[-1], out)
        return np.where(x < lo, lo_value, out)

    return evaluate


def payoff_breakpoints(payoff: Callable, extra: Sequence[float] = ()) -> list[float]:
    kinks = list(getattr(payoff, "kinks", ()))
    return sorted(set(k for k in (*kinks, *extra) if math.isfinite(k) and k > 0))
