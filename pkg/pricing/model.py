import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

import numpy as np

from utils.logger import get_logger

logger = get_logger("model")


class ParameterError(ValueError):
    pass


class UnsupportedRegimeError(ValueError):
    def __init__(self, message: str, L1: float, L2: float) -> None:
        super().__init__(message)
        self.L1 = L1
        self.L2 = L2


class Continuity(str, Enum):
    RIGHT = "right"
    LEFT = "left"


class CaseLabel(str, Enum):
    CASE_I = "CaseI"
    CASE_II = "CaseII"
    CASE_III = "CaseIII"
    DEGENERATE = "Degenerate"


@dataclass(frozen=True)
class MarketParams:
    r: float
    delta: float
    sigma: float
    K: float

    def __post_init__(self) -> None:
        for name in ("r", "delta", "sigma", "K"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ParameterError(f"{name} must be a finite number")
        if self.r <= 0:
            raise ParameterError("r must be positive")
        if self.sigma <= 0:
            raise ParameterError("sigma must be positive")
        if self.delta < 0:
            raise ParameterError("delta must be non-negative")
        if self.K <= 0:
            raise ParameterError("K must be positive")

    @property
    def mu(self) -> float:
        """Drift of log S: r - delta - sigma^2/2."""
        return self.r - self.delta - 0.5 * self.sigma * self.sigma

    @property
    def dividend_threshold(self) -> float:
        """rK/delta, below which waiting always pays; +inf when delta = 0."""
        if self.delta == 0:
            return math.inf
        return self.r * self.K / self.delta


@dataclass(frozen=True)
class TwoLevelCap:
    L1: float
    L2: float
    T1: float
    T2: float
    continuity: Continuity = Continuity.RIGHT

    def __post_init__(self) -> None:
        for name in ("L1", "L2", "T1", "T2"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ParameterError(f"{name} must be a finite number")
        if not 0 < self.T1 < self.T2:
            raise ParameterError("cap dates must satisfy 0 < T1 < T2")
        if self.L1 <= 0 or self.L2 <= 0:
            raise ParameterError("cap levels must be positive")
        object.__setattr__(self, "continuity", Continuity(self.continuity))

    @property
    def decreasing(self) -> bool:
        return self.L1 > self.L2

    def level_at(self, t: float, tol: float = 1e-12) -> float:
        """Cap in force at time t; at T1 the continuity convention decides."""
        if abs(t - self.T1) <= tol * max(1.0, self.T2):
            return self.L1 if self.continuity is Continuity.LEFT else self.L2
        return self.L1 if t < self.T1 else self.L2

    def check_against(self, params: MarketParams) -> None:
        if self.L1 <= params.K or self.L2 <= params.K:
            raise ParameterError(f"cap levels must exceed the strike K={params.K}")


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    n_steps: int
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ParameterError("n_steps must be a positive integer")
        if not self.t_end > self.t_start:
            raise ParameterError("grid end must be after grid start")
        nodes = np.linspace(self.t_start, self.t_end, int(self.n_steps) + 1)
        nodes[0] = self.t_start
        nodes[-1] = self.t_end
        nodes.setflags(write=False)
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "nodes", nodes)

    @property
    def h(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    def node_index(self, t: float, tol: float = 1e-9) -> Optional[int]:
        """Index of the node equal to t (within tol * h), else None."""
        pos = (t - self.t_start) / self.h
        i = int(round(pos))
        if 0 <= i <= self.n_steps and abs(pos - i) <= tol:
            return i
        return None

    def nodes_after(self, t: float) -> np.ndarray:
        """[t] followed by the grid nodes strictly after t (a node closer than 1e-9*h is merged)."""
        later = self.nodes[self.nodes > t + 1e-9 * self.h]
        return np.concatenate(([t], later))


@dataclass(frozen=True, eq=False)
class Boundary:
    """Exercise boundary sampled on a time grid; np.inf marks the Infinite variant."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n_steps + 1,):
            raise ParameterError("boundary needs one value per grid node")
        finite = np.isfinite(values)
        if np.any(np.isnan(values)) or np.any(values[finite] <= 0) or np.any(values == -np.inf):
            raise ParameterError("finite boundary values must be positive")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def infinite(cls, grid: TimeGrid) -> "Boundary":
        return cls(grid, np.full(grid.n_steps + 1, np.inf))

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def all_infinite(self) -> bool:
        return bool(np.all(np.isinf(self.values)))

    def covers(self, t: float) -> bool:
        tol = 1e-9 * self.grid.h
        return self.grid.t_start - tol <= t <= self.grid.t_end + tol

    def evaluate(self, t: float) -> float:
        """Linear interpolation; exact at nodes; any interval touching an Infinite node is Infinite."""
        i = self.grid.node_index(t)
        if i is not None:
            return float(self.values[i])
        if not self.covers(t):
            raise ParameterError(f"t={t} outside boundary domain [{self.grid.t_start}, {self.grid.t_end}]")
        pos = (t - self.grid.t_start) / self.grid.h
        j = min(max(int(math.floor(pos)), 0), self.grid.n_steps - 1)
        a, b = self.values[j], self.values[j + 1]
        if math.isinf(a) or math.isinf(b):
            return math.inf
        w = pos - j
        return float(a + w * (b - a))

    def evaluate_many(self, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if times.size and not (self.covers(float(times.min())) and self.covers(float(times.max()))):
            raise ParameterError(f"times outside boundary domain [{self.grid.t_start}, {self.grid.t_end}]")
        n = self.grid.n_steps
        pos = (times - self.grid.t_start) / self.grid.h
        j = np.clip(np.floor(pos).astype(int), 0, n - 1)
        w = pos - j
        a = self.values[j]
        b = self.values[j + 1]
        with np.errstate(invalid="ignore"):
            out = np.where(np.isinf(a) | np.isinf(b), np.inf, a + w * (b - a))
        nearest = np.clip(np.rint(pos).astype(int), 0, n)
        on_node = np.abs(pos - nearest) <= 1e-9
        return np.where(on_node, self.values[nearest], out)

    def is_infinite(self, t: float) -> bool:
        return math.isinf(self.evaluate(t))


@dataclass(frozen=True)
class Diagnostics:
    residuals: dict[str, float] = field(default_factory=dict)
    flagged_nodes: tuple[str, ...] = ()
    notes: tuple[str, ...] = ()
    derivative_errors: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class SolveReport:
    case: CaseLabel
    uncapped: Boundary
    bl2: Boundary
    bl1: Optional[Boundary]
    t0: Optional[float]
    T0: Optional[float]
    t1: Optional[float]
    t_star: float
    t_star1: Optional[float]
    diagnostics: Diagnostics
    bw: Optional[Boundary] = None
    bl1_at_T1: Optional[float] = None
    B_at_T1: Optional[float] = None
    params: Optional[MarketParams] = field(default=None, repr=False)
    cap: Optional[TwoLevelCap] = field(default=None, repr=False)
    engine: Any = field(default=None, repr=False, compare=False)


def classify_case(params: MarketParams, cap: TwoLevelCap, B_at_T1: float) -> CaseLabel:
    cap.check_against(params)
    if cap.L1 == cap.L2:
        return CaseLabel.DEGENERATE
    if cap.L1 > cap.L2:
        if cap.continuity is not Continuity.LEFT:
            raise UnsupportedRegimeError(
                "decreasing cap (L1 > L2) requires the left-continuous convention", cap.L1, cap.L2
            )
        return CaseLabel.CASE_III
    if cap.L1 < B_at_T1:
        return CaseLabel.CASE_I
    return CaseLabel.CASE_II


def t_zero(params: MarketParams, cap: TwoLevelCap) -> Optional[float]:
    """Latest time at which (L2-K) discounted to t equals L1-K; None if negative."""
    if cap.L1 > cap.L2:
        raise ParameterError("t0 is only defined for L1 <= L2")
    value = cap.T1 - math.log((cap.L2 - params.K) / (cap.L1 - params.K)) / params.r
    if value < 0:
        return None
    return value
