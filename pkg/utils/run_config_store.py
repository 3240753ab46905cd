import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence

import numpy as np

from pricing.model import Boundary, SolveReport
from pricing.pipeline import HittingCheck, OracleDelta, PricePoint, derivative_series

from .logger import get_logger
from .run_config_schema import RunConfig, RunConfigValidationError, build_run_config

logger = get_logger("run_config_store")

BOUNDARY_FILE = "boundaries.csv"
TIMES_FILE = "times.txt"
PRICES_FILE = "prices.csv"
DIAGNOSTICS_FILE = "diagnostics.txt"
DERIVATIVE_FILE = "cap_derivative.csv"


@dataclass(frozen=True)
class RunOutputs:
    boundaries: Path
    times: Path
    diagnostics: Path
    derivatives: Path
    prices: Optional[Path] = None


def parse_run_config(raw: str) -> Dict[str, str]:
    """key=value lines; blank lines and # comments skipped, `export ` prefix and matching quotes trimmed."""
    data: Dict[str, str] = {}
    for number, line in enumerate(raw.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("export "):
            line = line[7:].strip()
        if "=" not in line:
            raise RunConfigValidationError(f"line {number}: expected key=value")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            continue
        if len(value) >= 2 and value[0] == value[-1] and value[0] in {"'", '"'}:
            value = value[1:-1]
        data[key] = value
    return data


def read_run_config(path: str, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    raw = Path(path).read_text(encoding="utf-8")
    data: Dict[str, Any] = parse_run_config(raw)
    data.update(overrides or {})
    config = build_run_config(data)
    logger.info("Run config loaded from %s", path)
    return config


def _write_atomic(path: Path, text: str) -> None:
    os.makedirs(path.parent, exist_ok=True)
    tmp_path = path.with_name(f"{path.name}.tmp")
    with open(tmp_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    os.replace(tmp_path, path)


def _number(value: Optional[float]) -> str:
    if value is None:
        return ""
    if math.isinf(value):
        return "inf"
    return format(float(value), ".17g")


def _merged_times(arrays: Iterable[np.ndarray]) -> np.ndarray:
    times = np.unique(np.concatenate([np.asarray(a, dtype=float) for a in arrays]))
    keep = np.concatenate(([True], np.diff(times) > 1e-12))
    return times[keep]


def _column(boundary: Optional[Boundary], t: float) -> str:
    if boundary is None or not boundary.covers(t):
        return ""
    return _number(boundary.evaluate(t))


def emit_boundary_csv(report: SolveReport, path) -> Path:
    """Columns t,B,B_L2,B_L1; `inf` for Infinite, empty outside a boundary's domain."""
    path = Path(path)
    columns = [report.uncapped, report.bl2, report.bl1]
    times = _merged_times(b.nodes for b in columns if b is not None)
    lines = ["t,B,B_L2,B_L1"]
    for t in times:
        lines.append(",".join([format(t, ".9f")] + [_column(b, float(t)) for b in columns]))
    _write_atomic(path, "\n".join(lines) + "\n")
    return path


def read_boundary_csv(path) -> Dict[str, tuple[np.ndarray, np.ndarray]]:
    """Inverse of emit_boundary_csv: per column, the times with a value and the values."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")
    out: Dict[str, tuple[list, list]] = {name: ([], []) for name in header[1:]}
    for line in lines[1:]:
        cells = line.split(",")
        t = float(cells[0])
        for name, cell in zip(header[1:], cells[1:]):
            if cell:
                out[name][0].append(t)
                out[name][1].append(float(cell))
    return {name: (np.array(ts), np.array(vs)) for name, (ts, vs) in out.items()}


def write_times(report: SolveReport, path) -> Path:
    path = Path(path)
    cap = report.cap
    entries = [
        ("case", report.case.value),
        ("t_star", report.t_star),
        ("t0", report.t0),
        ("T0", report.T0),
        ("t1", report.t1),
        ("t_star1", report.t_star1),
        ("B_at_T1", report.B_at_T1),
        ("bl1_at_T1", report.bl1_at_T1),
        ("L1", cap.L1),
        ("L2", cap.L2),
        ("T1", cap.T1),
        ("T2", cap.T2),
    ]
    lines = []
    for key, value in entries:
        if isinstance(value, str):
            lines.append(f"{key}={value}")
        else:
            lines.append(f"{key}={'none' if value is None else _number(value)}")
    _write_atomic(path, "\n".join(lines) + "\n")
    return path


def read_times(path) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for key, value in ((line.split("=", 1)) for line in Path(path).read_text(encoding="utf-8").splitlines() if "=" in line):
        if value == "none":
            out[key] = None
        else:
            try:
                out[key] = float(value)
            except ValueError:
                out[key] = value
    return out


def write_prices(points: Sequence[PricePoint], path) -> Path:
    path = Path(path)
    lines = ["S,t,price,payoff,region"]
    for p in points:
        lines.append(f"{_number(p.S)},{format(p.t, '.9f')},{_number(p.price)},{_number(p.payoff)},{p.region}")
    _write_atomic(path, "\n".join(lines) + "\n")
    return path


def write_derivatives(report: SolveReport, path) -> Path:
    path = Path(path)
    series = derivative_series(report)
    names = list(series)
    times = _merged_times(nodes for nodes, _ in series.values())
    lookup = {name: {round(float(t), 12): float(v) for t, v in zip(*series[name])} for name in names}
    lines = ["t," + ",".join(names)]
    for t in times:
        key = round(float(t), 12)
        cells = [_number(lookup[name].get(key)) for name in names]
        lines.append(",".join([format(t, ".9f")] + cells))
    _write_atomic(path, "\n".join(lines) + "\n")
    return path


def write_diagnostics(
    report: SolveReport, path, deltas: Sequence[OracleDelta] = (), checks: Sequence[HittingCheck] = ()
) -> Path:
    path = Path(path)
    diag = report.diagnostics
    lines = []
    for key in sorted(diag.residuals):
        lines.append(f"residual.{key}={_number(diag.residuals[key])}")
    for key in sorted(diag.derivative_errors):
        lines.append(f"derivative_error.{key}={_number(diag.derivative_errors[key])}")
    for k, item in enumerate(diag.flagged_nodes):
        lines.append(f"flagged.{k}={item}")
    for k, item in enumerate(diag.notes):
        lines.append(f"note.{k}={item}")
    for k, d in enumerate(deltas):
        fields = [_number(d.S), _number(d.t), _number(d.eep), _number(d.lattice), _number(d.delta)]
        if d.right_continuous is not None:
            fields.append(_number(d.right_continuous))
        lines.append(f"oracle.{k}={','.join(fields)}")
    for k, c in enumerate(checks):
        values = [c.S, c.t, c.analytic, c.estimate.mean, c.estimate.stderr]
        lines.append(f"mc_hit.{k}={','.join(_number(v) for v in values)}")
    _write_atomic(path, "\n".join(lines) + "\n")
    return path


def write_outputs(
    report: SolveReport,
    config: RunConfig,
    prices: Sequence[PricePoint] = (),
    deltas: Sequence[OracleDelta] = (),
    checks: Sequence[HittingCheck] = (),
    output_dir: Optional[str] = None,
) -> RunOutputs:
    out = Path(output_dir or config.output_dir)
    outputs = RunOutputs(
        boundaries=emit_boundary_csv(report, out / BOUNDARY_FILE),
        times=write_times(report, out / TIMES_FILE),
        diagnostics=write_diagnostics(report, out / DIAGNOSTICS_FILE, deltas, checks),
        derivatives=write_derivatives(report, out / DERIVATIVE_FILE),
        prices=write_prices(prices, out / PRICES_FILE) if prices else None,
    )
    logger.info("Outputs written to %s", out)
    return outputs
