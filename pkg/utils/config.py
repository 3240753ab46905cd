import os
from typing import Optional

VERSION = "0.4.1"

ENV_PREFIX = "CAPSTOP_"


def _env_raw(key: str) -> Optional[str]:
    raw = os.getenv(ENV_PREFIX + key)
    if raw is None or not raw.strip():
        return None
    return raw.strip()


def _env_int(key: str, default: int) -> int:
    """CAPSTOP_<key> as an int; unset, blank or malformed values give the default."""
    raw = _env_raw(key)
    try:
        return default if raw is None else int(raw)
    except ValueError:
        return default


def _env_float(key: str, default: float) -> float:
    raw = _env_raw(key)
    try:
        return default if raw is None else float(raw)
    except ValueError:
        return default


def _env_bool(key: str, default: bool) -> bool:
    raw = _env_raw(key)
    if raw is None:
        return default
    return raw.lower() in {"1", "true", "yes", "y", "on"}


# Backward-induction grids.
UNCAPPED_STEPS = _env_int("UNCAPPED_STEPS", 400)
SINGLE_CAP_STEPS = _env_int("SINGLE_CAP_STEPS", 200)
TWO_LEVEL_STEPS = _env_int("TWO_LEVEL_STEPS", 200)

# Quadrature and root finding.
QUAD_TOL = _env_float("QUAD_TOL", 1e-8)
ROOT_TOL = _env_float("ROOT_TOL", 1e-10)
TIME_ROOT_TOL = _env_float("TIME_ROOT_TOL", 1e-8)
SIMPSON_PANELS = _env_int("SIMPSON_PANELS", 200)
GAUSS_NODES = _env_int("GAUSS_NODES", 64)
TABULATION_POINTS = _env_int("TABULATION_POINTS", 160)
TAIL_STDEVS = _env_float("TAIL_STDEVS", 10.0)

# One-sided derivative steps, relative to the cap level (caps) or strike (boundaries).
CAP_EPS_FACTOR = _env_float("CAP_EPS_FACTOR", 1e-4)
BOUNDARY_EPS_FACTOR = _env_float("BOUNDARY_EPS_FACTOR", 1e-4)

# Per-node residual above RESIDUAL_FLAG * K is reported in diagnostics.
RESIDUAL_FLAG = _env_float("RESIDUAL_FLAG", 1e-6)
ASSUME_SMOOTH_FIT = _env_bool("ASSUME_SMOOTH_FIT", False)

# Oracles.
LATTICE_STEPS = _env_int("LATTICE_STEPS", 20_000)
MC_PATHS = _env_int("MC_PATHS", 100_000)
MC_STEPS = _env_int("MC_STEPS", 1_000)
MC_CHUNK = _env_int("MC_CHUNK", 10_000)
MC_SEED = _env_int("MC_SEED", 20_240_601)
