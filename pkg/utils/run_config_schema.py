from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional

import numpy as np

from pricing.model import Continuity, MarketParams, ParameterError, TwoLevelCap
from pricing.pipeline import SolverSettings

from .config import (
    ASSUME_SMOOTH_FIT,
    BOUNDARY_EPS_FACTOR,
    CAP_EPS_FACTOR,
    LATTICE_STEPS,
    MC_PATHS,
    MC_SEED,
    MC_STEPS,
    SINGLE_CAP_STEPS,
    TWO_LEVEL_STEPS,
    UNCAPPED_STEPS,
)


class RunConfigValidationError(ValueError):
    pass


_TRUE = {"1", "true", "yes", "y", "on"}
_FALSE = {"0", "false", "no", "n", "off"}

# Smallest accepted oracle.mc_paths.
MIN_MC_PATHS = 10_000

# None marks a key the run file must provide.
DEFAULT_RUN_CONFIG: Dict[str, Any] = {
    "market.r": None,
    "market.delta": None,
    "market.sigma": None,
    "market.K": 1.0,
    "cap.L1": None,
    "cap.L2": None,
    "cap.T1": None,
    "cap.T2": None,
    "cap.continuity": Continuity.RIGHT.value,
    "grid.uncapped_steps": UNCAPPED_STEPS,
    "grid.two_level_steps": TWO_LEVEL_STEPS,
    "grid.single_cap_steps": SINGLE_CAP_STEPS,
    "solver.assume_smooth_fit": ASSUME_SMOOTH_FIT,
    "solver.cap_eps_factor": CAP_EPS_FACTOR,
    "solver.boundary_eps_factor": BOUNDARY_EPS_FACTOR,
    "price.points": "",
    "price.mesh_s": "",
    "price.mesh_t": "",
    "oracle.lattice_steps": LATTICE_STEPS,
    "oracle.mc_paths": MC_PATHS,
    "oracle.mc_steps": MC_STEPS,
    "oracle.seed": MC_SEED,
    "output.dir": "out",
}


@dataclass(frozen=True)
class OracleSettings:
    lattice_steps: int
    mc_paths: int
    mc_steps: int
    seed: int


@dataclass(frozen=True)
class RunConfig:
    market: MarketParams
    cap: TwoLevelCap
    settings: SolverSettings
    points: tuple[tuple[float, float], ...]
    oracle: OracleSettings
    output_dir: str


def _float(merged: Mapping[str, Any], key: str, *, positive: bool = False, non_negative: bool = False) -> float:
    raw = merged.get(key)
    if raw is None or (isinstance(raw, str) and not raw.strip()):
        raise RunConfigValidationError(f"{key} is required")
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise RunConfigValidationError(f"{key} must be a number")
    if not np.isfinite(value):
        raise RunConfigValidationError(f"{key} must be finite")
    if positive and value <= 0:
        raise RunConfigValidationError(f"{key} must be positive")
    if non_negative and value < 0:
        raise RunConfigValidationError(f"{key} must be non-negative")
    return value


def _int(merged: Mapping[str, Any], key: str, low: int, high: int) -> int:
    raw = merged.get(key)
    try:
        value = int(str(raw).strip())
    except (TypeError, ValueError):
        raise RunConfigValidationError(f"{key} must be an integer")
    if value < low or value > high:
        raise RunConfigValidationError(f"{key} must be between {low} and {high}")
    return value


def _bool(merged: Mapping[str, Any], key: str) -> bool:
    raw = merged.get(key)
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise RunConfigValidationError(f"{key} must be a boolean")


def _points(raw: Any) -> list[tuple[float, float]]:
    text = str(raw or "").strip()
    if not text:
        return []
    points = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            s, t = (float(part) for part in item.split(":"))
        except ValueError:
            raise RunConfigValidationError(f"price.points entry {item!r} must look like S:t")
        if s <= 0 or t < 0:
            raise RunConfigValidationError(f"price.points entry {item!r} needs S > 0 and t >= 0")
        points.append((s, t))
    return points


def _mesh(raw: Any, key: str) -> Optional[np.ndarray]:
    text = str(raw or "").strip()
    if not text:
        return None
    try:
        start, stop, count = text.split(":")
        start, stop, count = float(start), float(stop), int(count)
    except ValueError:
        raise RunConfigValidationError(f"{key} must look like start:stop:count")
    if count < 1 or count > 1000:
        raise RunConfigValidationError(f"{key} count must be between 1 and 1000")
    return np.linspace(start, stop, count)


def validate_run_config(data: Mapping[str, Any]) -> Dict[str, Any]:
    unknown = sorted(k for k in data if k not in DEFAULT_RUN_CONFIG)
    if unknown:
        raise RunConfigValidationError(f"Unknown setting: {unknown[0]}")
    merged = dict(DEFAULT_RUN_CONFIG)
    merged.update(data)

    cleaned: Dict[str, Any] = {}
    cleaned["market.r"] = _float(merged, "market.r", positive=True)
    cleaned["market.delta"] = _float(merged, "market.delta", non_negative=True)
    cleaned["market.sigma"] = _float(merged, "market.sigma", positive=True)
    cleaned["market.K"] = _float(merged, "market.K", positive=True)
    for key in ("cap.L1", "cap.L2", "cap.T1", "cap.T2"):
        cleaned[key] = _float(merged, key, positive=True)
    if not cleaned["cap.T1"] < cleaned["cap.T2"]:
        raise RunConfigValidationError("cap.T1 must be before cap.T2")
    if min(cleaned["cap.L1"], cleaned["cap.L2"]) <= cleaned["market.K"]:
        raise RunConfigValidationError("cap.L1 and cap.L2 must exceed market.K")
    continuity = str(merged["cap.continuity"]).strip().lower()
    if continuity not in {c.value for c in Continuity}:
        raise RunConfigValidationError("cap.continuity must be 'right' or 'left'")
    cleaned["cap.continuity"] = continuity

    cleaned["grid.uncapped_steps"] = _int(merged, "grid.uncapped_steps", 10, 100_000)
    cleaned["grid.two_level_steps"] = _int(merged, "grid.two_level_steps", 4, 100_000)
    cleaned["grid.single_cap_steps"] = _int(merged, "grid.single_cap_steps", 4, 100_000)
    cleaned["solver.assume_smooth_fit"] = _bool(merged, "solver.assume_smooth_fit")
    for key in ("solver.cap_eps_factor", "solver.boundary_eps_factor"):
        value = _float(merged, key, positive=True)
        if value >= 0.1:
            raise RunConfigValidationError(f"{key} must be below 0.1")
        cleaned[key] = value

    points = _points(merged["price.points"])
    mesh_s = _mesh(merged["price.mesh_s"], "price.mesh_s")
    mesh_t = _mesh(merged["price.mesh_t"], "price.mesh_t")
    if (mesh_s is None) != (mesh_t is None):
        raise RunConfigValidationError("price.mesh_s and price.mesh_t go together")
    if mesh_s is not None:
        if np.any(mesh_s <= 0) or np.any(mesh_t < 0):
            raise RunConfigValidationError("price mesh needs S > 0 and t >= 0")
        points.extend((float(s), float(t)) for t in mesh_t for s in mesh_s)
    if any(t > cleaned["cap.T2"] for _, t in points):
        raise RunConfigValidationError("price query times must not exceed cap.T2")
    cleaned["price.points"] = tuple(points)

    cleaned["oracle.lattice_steps"] = _int(merged, "oracle.lattice_steps", 2, 1_000_000)
    cleaned["oracle.mc_paths"] = _int(merged, "oracle.mc_paths", MIN_MC_PATHS, 100_000_000)
    cleaned["oracle.mc_steps"] = _int(merged, "oracle.mc_steps", 1, 1_000_000)
    cleaned["oracle.seed"] = _int(merged, "oracle.seed", 0, 2**64 - 1)

    output_dir = str(merged.get("output.dir") or "").strip()
    if not output_dir:
        raise RunConfigValidationError("output.dir must be a non-empty path")
    cleaned["output.dir"] = output_dir
    return cleaned


def build_run_config(data: Mapping[str, Any]) -> RunConfig:
    cleaned = validate_run_config(data)
    try:
        market = MarketParams(
            r=cleaned["market.r"],
            delta=cleaned["market.delta"],
            sigma=cleaned["market.sigma"],
            K=cleaned["market.K"],
        )
        cap = TwoLevelCap(
            L1=cleaned["cap.L1"],
            L2=cleaned["cap.L2"],
            T1=cleaned["cap.T1"],
            T2=cleaned["cap.T2"],
            continuity=Continuity(cleaned["cap.continuity"]),
        )
    except ParameterError as exc:
        raise RunConfigValidationError(str(exc)) from exc
    settings = SolverSettings(
        uncapped_steps=cleaned["grid.uncapped_steps"],
        two_level_steps=cleaned["grid.two_level_steps"],
        single_cap_steps=cleaned["grid.single_cap_steps"],
        assume_smooth_fit=cleaned["solver.assume_smooth_fit"],
        cap_eps_factor=cleaned["solver.cap_eps_factor"],
        boundary_eps_factor=cleaned["solver.boundary_eps_factor"],
    )
    oracle = OracleSettings(
        lattice_steps=cleaned["oracle.lattice_steps"],
        mc_paths=cleaned["oracle.mc_paths"],
        mc_steps=cleaned["oracle.mc_steps"],
        seed=cleaned["oracle.seed"],
    )
    return RunConfig(market, cap, settings, cleaned["price.points"], oracle, cleaned["output.dir"])
