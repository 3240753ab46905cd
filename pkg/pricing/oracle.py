"""Independent validators: a CRR lattice for the two-level capped call with
exercise-frontier extraction, and Monte Carlo estimators for the first-passage
expectations and the expected local time."""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from utils.config import LATTICE_STEPS, MC_CHUNK, MC_PATHS, MC_SEED, MC_STEPS
from utils.logger import get_logger

from .model import MarketParams, TwoLevelCap

logger = get_logger("oracle")


class LatticeError(ValueError):
    def __init__(self, message: str, n_steps: int, probability: float) -> None:
        super().__init__(message)
        self.n_steps = n_steps
        self.probability = probability


@dataclass(frozen=True)
class LatticeConfig:
    n_steps: int = LATTICE_STEPS
    snap_T1: bool = True
    keep_frontier: bool = False

    def __post_init__(self) -> None:
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise ValueError("lattice needs at least two steps")


@dataclass(frozen=True)
class FrontierLayer:
    t: float
    lower: Optional[float]
    upper: Optional[float]
    ray: bool
    anomalous: bool

    @property
    def empty(self) -> bool:
        return self.lower is None


@dataclass(frozen=True)
class FrontierEstimate:
    layers: tuple[FrontierLayer, ...]

    def between(self, a: float, b: float) -> tuple[FrontierLayer, ...]:
        return tuple(layer for layer in self.layers if a < layer.t < b)

    def at(self, t: float) -> FrontierLayer:
        times = np.array([layer.t for layer in self.layers])
        return self.layers[int(np.argmin(np.abs(times - t)))]


@dataclass(frozen=True, eq=False)
class LatticeEvaluation:
    price: float
    # per layer: (time, exercising runs as (lo, hi) price pairs, top node price)
    runs: tuple[tuple[float, tuple[tuple[float, float], ...], float], ...] = ()


def _layer_cap(tau: float, cap: TwoLevelCap, tol: float) -> float:
    if abs(tau - cap.T1) <= tol:
        return cap.level_at(cap.T1)
    return cap.L1 if tau < cap.T1 else cap.L2


def _branch_probability(params: MarketParams, u: float, dt: float, n_steps: int) -> float:
    d = 1.0 / u
    p = (math.exp((params.r - params.delta) * dt) - d) / (u - d)
    if not 0.0 < p < 1.0:
        raise LatticeError(
            f"branch probability {p:.4g} outside (0, 1); increase n_steps beyond {n_steps}",
            n_steps=n_steps,
            probability=p,
        )
    return p


def _exercise_runs(mask: np.ndarray, prices: np.ndarray) -> tuple[tuple[float, float], ...]:
    if not mask.any():
        return ()
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.diff(padded)
    starts = np.nonzero(edges == 1)[0]
    stops = np.nonzero(edges == -1)[0] - 1
    return tuple((float(prices[a]), float(prices[b])) for a, b in zip(starts, stops))


def lattice_evaluate(
    S: float, t: float, params: MarketParams, cap: TwoLevelCap, config: LatticeConfig = LatticeConfig()
) -> LatticeEvaluation:
    """CRR backward induction with payoff (S^L(layer) - K)+ and a layer placed on T1."""
    T = cap.T2
    if t >= T:
        return LatticeEvaluation(max(min(S, cap.L2) - params.K, 0.0))
    n = config.n_steps
    if config.snap_T1 and t < cap.T1:
        n1 = min(max(int(round(n * (cap.T1 - t) / (T - t))), 1), n - 1)
        dt1 = (cap.T1 - t) / n1
        dt2 = (T - cap.T1) / (n - n1)
    else:
        n1 = n
        dt1 = dt2 = (T - t) / n
    u = math.exp(params.sigma * math.sqrt(dt1))
    p1 = _branch_probability(params, u, dt1, n)
    p2 = _branch_probability(params, u, dt2, n)
    disc1 = math.exp(-params.r * dt1)
    disc2 = math.exp(-params.r * dt2)
    tol = 1e-9 * min(dt1, dt2)
    log_u = math.log(u)

    def layer_time(k: int) -> float:
        return t + k * dt1 if k <= n1 else cap.T1 + (k - n1) * dt2

    def layer_prices(k: int) -> np.ndarray:
        return S * np.exp((2.0 * np.arange(k + 1) - k) * log_u)

    prices = layer_prices(n)
    values = np.maximum(np.minimum(prices, _layer_cap(T, cap, tol)) - params.K, 0.0)
    runs = []
    for k in range(n - 1, -1, -1):
        p, disc = (p1, disc1) if k < n1 else (p2, disc2)
        continuation = disc * (p * values[1 : k + 2] + (1.0 - p) * values[: k + 1])
        prices = layer_prices(k)
        tau = layer_time(k)
        payoff = np.minimum(prices, _layer_cap(tau, cap, tol)) - params.K
        values = np.maximum(continuation, payoff)
        if config.keep_frontier:
            exercise = (payoff > continuation + 1e-12 * params.K) & (payoff > 0)
            runs.append((tau, _exercise_runs(exercise, prices), float(prices[-1])))
    runs.reverse()
    logger.debug("lattice n=%d (n1=%d) price %.10g", n, n1, values[0])
    return LatticeEvaluation(float(values[0]), tuple(runs))


def lattice_price(
    S: float, t: float, params: MarketParams, cap: TwoLevelCap, config: LatticeConfig = LatticeConfig()
) -> float:
    return lattice_evaluate(S, t, params, cap, config).price


def extract_frontier(evaluation: LatticeEvaluation) -> FrontierEstimate:
    """Summarize each layer's exercising nodes as a band [lo, hi] or a ray [lo, top]."""
    layers = []
    for tau, runs, top in evaluation.runs:
        if not runs:
            layers.append(FrontierLayer(tau, None, None, ray=False, anomalous=False))
            continue
        lower = runs[0][0]
        upper = runs[-1][1]
        layers.append(FrontierLayer(tau, lower, upper, ray=upper >= top, anomalous=len(runs) > 1))
    anomalous = sum(layer.anomalous for layer in layers)
    if anomalous:
        logger.info("lattice frontier: %d layer(s) with more than one exercise run", anomalous)
    return FrontierEstimate(tuple(layers))


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    stderr: float


@dataclass(frozen=True)
class HittingEstimates:
    hit: MonteCarloEstimate
    killed: MonteCarloEstimate


class _Accumulator:
    def __init__(self) -> None:
        self.n = 0
        self.total = 0.0
        self.total_sq = 0.0

    def add(self, samples: np.ndarray) -> None:
        self.n += samples.size
        self.total += float(samples.sum())
        self.total_sq += float(np.dot(samples, samples))

    def estimate(self) -> MonteCarloEstimate:
        mean = self.total / self.n
        var = max(self.total_sq / self.n - mean * mean, 0.0)
        return MonteCarloEstimate(mean, math.sqrt(var / max(self.n - 1, 1)))


def _chunk_sizes(n_paths: int, chunk: int) -> list[int]:
    sizes = [chunk] * (n_paths // chunk)
    if n_paths % chunk:
        sizes.append(n_paths % chunk)
    return sizes


def _log_paths(rng: np.random.Generator, S: float, mu: float, sigma: float, dt: float, n_paths: int, n_steps: int) -> np.ndarray:
    shocks = mu * dt + sigma * math.sqrt(dt) * rng.standard_normal((n_paths, n_steps))
    x = np.empty((n_paths, n_steps + 1))
    x[:, 0] = math.log(S)
    np.cumsum(shocks, axis=1, out=x[:, 1:])
    x[:, 1:] += x[:, :1]
    return x


def mc_hitting_expectations(
    S: float,
    L: float,
    t: float,
    T: float,
    params: MarketParams,
    G: Callable[[np.ndarray], np.ndarray],
    n_paths: int = MC_PATHS,
    n_steps: int = MC_STEPS,
    seed: int = MC_SEED,
    chunk: int = MC_CHUNK,
) -> HittingEstimates:
    """E[e^{-r(tau-t)} 1{tau<T}] and E[e^{-r(T-t)} G(S_T) 1{tau>=T}] for the first passage through L.

    Exact log-GBM steps; the crossing probability of the Brownian bridge between
    monitoring dates is integrated out per path, so each path contributes its
    survival-weighted values rather than a 0/1 outcome.
    """
    if S == L:
        return HittingEstimates(MonteCarloEstimate(1.0, 0.0), MonteCarloEstimate(0.0, 0.0))
    tau = T - t
    if tau <= 0:
        return HittingEstimates(MonteCarloEstimate(0.0, 0.0), MonteCarloEstimate(float(G(np.array([S]))[0]), 0.0))
    dt = tau / n_steps
    barrier = math.log(L)
    mid_disc = np.exp(-params.r * (np.arange(n_steps) + 0.5) * dt)
    end_disc = math.exp(-params.r * tau)
    sizes = _chunk_sizes(n_paths, chunk)
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    hit_acc, killed_acc = _Accumulator(), _Accumulator()
    for size, stream in zip(sizes, streams):
        rng = np.random.default_rng(stream)
        x = _log_paths(rng, S, params.mu, params.sigma, dt, size, n_steps)
        dist = x - barrier
        same_side = dist[:, :-1] * dist[:, 1:] > 0
        with np.errstate(over="ignore"):
            cross = np.where(
                same_side,
                np.exp(-2.0 * dist[:, :-1] * dist[:, 1:] / (params.sigma**2 * dt)),
                1.0,
            )
        survive = np.cumprod(1.0 - cross, axis=1)
        before = np.concatenate((np.ones((size, 1)), survive[:, :-1]), axis=1)
        hit_acc.add((before * cross) @ mid_disc)
        killed_acc.add(survive[:, -1] * end_disc * np.asarray(G(np.exp(x[:, -1])), dtype=float))
    result = HittingEstimates(hit_acc.estimate(), killed_acc.estimate())
    logger.debug("mc hitting S=%.6g L=%.6g: hit %.6g (%.2g), killed %.6g (%.2g)", S, L, result.hit.mean, result.hit.stderr, result.killed.mean, result.killed.stderr)
    return result


def mc_local_time(
    S: float,
    level: float,
    t: float,
    u: float,
    params: MarketParams,
    n_paths: int = MC_PATHS,
    n_steps: int = MC_STEPS,
    seed: int = MC_SEED,
    chunk: int = MC_CHUNK,
    eps: Optional[float] = None,
) -> MonteCarloEstimate:
    """Occupation-time estimate of E[local time at level over [t, u]], (1/2eps) int 1{|S-level|<eps} sigma^2 S^2 dv."""
    eps = eps or 0.01 * level
    tau = u - t
    if tau <= 0:
        return MonteCarloEstimate(0.0, 0.0)
    dt = tau / n_steps
    sizes = _chunk_sizes(n_paths, chunk)
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    acc = _Accumulator()
    weights = np.full(n_steps, dt)
    for size, stream in zip(sizes, streams):
        rng = np.random.default_rng(stream)
        prices = np.exp(_log_paths(rng, S, params.mu, params.sigma, dt, size, n_steps)[:, 1:])
        near = np.abs(prices - level) < eps
        acc.add((near * params.sigma**2 * prices**2) @ weights / (2.0 * eps))
    return acc.estimate()
