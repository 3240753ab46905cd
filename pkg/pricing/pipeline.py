"""Solve pipeline: the uncapped boundary, the second cap, then the case-specific
two-level construction, packaged into an immutable SolveReport."""

import math
from contextlib import contextmanager
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence

import numpy as np

from utils.config import (
    ASSUME_SMOOTH_FIT,
    BOUNDARY_EPS_FACTOR,
    CAP_EPS_FACTOR,
    SINGLE_CAP_STEPS,
    TWO_LEVEL_STEPS,
    UNCAPPED_STEPS,
)
from utils.logger import get_logger

from .model import (
    CaseLabel,
    Continuity,
    Diagnostics,
    MarketParams,
    SolveReport,
    TimeGrid,
    TwoLevelCap,
    classify_case,
    t_zero,
)
from .numerics import SolverError
from .analytic import discounted_hit_before
from .oracle import LatticeConfig, MonteCarloEstimate, lattice_price, mc_hitting_expectations
from .singlecap import capped_boundary, compute_t_star, solve_single_cap, verify_bl2_integral_equation
from .twolevel import (
    CaseISkeleton,
    CaseISolution,
    CaseIISolution,
    CaseIIISolution,
    TwoLevelEngine,
    c_zero_payoff_case_i,
    find_T0_case_i,
    find_T0_case_ii,
    price_two_level,
    solve_bl1_case_i,
    solve_bl1_case_ii,
    solve_bl1_case_iii,
    solve_bw,
    sub_cap_derivative,
    tabulate_waiting_value,
    waiting_payoff,
    waiting_value_curve_case_i,
    waiting_value_curve_case_ii,
)
from .uncapped import solve_uncapped_boundary

logger = get_logger("pipeline")

STEP_UNCAPPED = "step1-uncapped-boundary"
STEP_CAP = "step2-cap-derivative"
STEP_WAITING = "step3-4-waiting-boundary"
STEP_T0 = "step5-T0"
STEP_SUB_CAP = "step6-sub-cap-derivative"
STEP_BL1 = "step7-upper-boundary"


@dataclass(frozen=True)
class SolverSettings:
    uncapped_steps: int = UNCAPPED_STEPS
    two_level_steps: int = TWO_LEVEL_STEPS
    single_cap_steps: int = SINGLE_CAP_STEPS
    assume_smooth_fit: bool = ASSUME_SMOOTH_FIT
    cap_eps_factor: float = CAP_EPS_FACTOR
    boundary_eps_factor: float = BOUNDARY_EPS_FACTOR


@contextmanager
def pipeline_step(name: str) -> Iterator[None]:
    logger.info("%s", name)
    try:
        yield
    except SolverError as exc:
        raise exc.with_step(name)


def _steps_for(span: float, total: float, steps: int) -> int:
    return max(int(math.ceil(steps * span / total)), 2)


def _max(values) -> float:
    if values is None:
        return 0.0
    arr = np.asarray(values, dtype=float)
    return float(arr.max()) if arr.size else 0.0


def solve_report(params: MarketParams, cap: TwoLevelCap, settings: SolverSettings = SolverSettings()) -> SolveReport:
    """Run Steps 1 to 7 for the contract's case and return the solved report."""
    cap.check_against(params)
    with pipeline_step(STEP_UNCAPPED):
        uncapped = solve_uncapped_boundary(params, TimeGrid(0.0, cap.T2, settings.uncapped_steps))
    B_T1 = uncapped.boundary.evaluate(cap.T1)
    case = classify_case(params, cap, B_T1)
    t_star = compute_t_star(uncapped.boundary, cap)
    logger.info("case %s, B(T1)=%.8g, t*=%.8g", case.value, B_T1, t_star)

    with pipeline_step(STEP_CAP):
        second = solve_single_cap(
            uncapped, cap.L2, params, 0.0, settings.single_cap_steps, eps=settings.cap_eps_factor * cap.L2
        )
        bl2_residual = verify_bl2_integral_equation(second, params, t_from=cap.T1)
    bl2 = capped_boundary(uncapped.boundary, cap.L2, cap.T1, cap.T2, settings.single_cap_steps)

    residuals = {"uncapped": _max(uncapped.residuals), "bl2_integral_equation": bl2_residual}
    derivative_errors = {"cap_L2": _max(second.derivative_error)}
    flagged: list[str] = [f"B[{i}] held at the later value" for i in uncapped.clamped_nodes]
    notes: list[str] = []
    base = dict(case=case, uncapped=uncapped.boundary, bl2=bl2, t_star=t_star, B_at_T1=B_T1, params=params, cap=cap)

    if case is CaseLabel.DEGENERATE:
        notes.append("Degenerate: L1 == L2, priced as a single cap")
        diagnostics = Diagnostics(residuals, tuple(flagged), tuple(notes), derivative_errors)
        return SolveReport(
            bl1=None, t0=None, T0=None, t1=None, t_star1=None, diagnostics=diagnostics,
            engine=TwoLevelEngine(second), **base,
        )

    cap_eps = settings.cap_eps_factor * cap.L1
    boundary_eps = settings.boundary_eps_factor * params.K
    grid_T1 = TimeGrid(0.0, cap.T1, settings.two_level_steps)

    if case is CaseLabel.CASE_I:
        t0 = t_zero(params, cap)
        with pipeline_step(STEP_WAITING):
            at_T1 = waiting_payoff(second, params, cap)
            bw, t1 = solve_bw(second, params, cap, grid_T1, at_T1)
        if t1 <= 0:
            notes.append("B^w stays below L1: waiting until T1 is optimal above L1")
            skeleton = CaseISkeleton(t0, 0.0, 0.0, bw)
            solution = CaseISolution(params, cap, second, skeleton, None, None, at_T1=at_T1)
        else:
            with pipeline_step(STEP_T0):
                cw_at_t1 = tabulate_waiting_value(t1, second, params, cap)
                curve = waiting_value_curve_case_i(grid_T1, t1, cw_at_t1, second, params, cap, cap_eps)
                T0 = find_T0_case_i(curve, t1)
            grid = TimeGrid(0.0, t1, _steps_for(t1, cap.T1, settings.two_level_steps))
            with pipeline_step(STEP_SUB_CAP):
                terminal = c_zero_payoff_case_i(T0, t1, cw_at_t1, params, cap)
                sub = sub_cap_derivative(grid, T0, terminal, params, cap, cap_eps)
            with pipeline_step(STEP_BL1):
                solution = solve_bl1_case_i(
                    CaseISkeleton(t0, t1, T0, bw),
                    params,
                    grid,
                    cap=cap,
                    singlecap=second,
                    curve=curve,
                    cw_at_t1=cw_at_t1,
                    terminal=terminal,
                    sub_derivative=sub,
                    at_T1=at_T1,
                    assume_smooth_fit=settings.assume_smooth_fit,
                    eps=boundary_eps,
                )
            derivative_errors["sub_cap_L1"] = _max(sub[1])
        skeleton = solution.skeleton
        _collect_band(solution.induction, residuals, derivative_errors, flagged, notes)
        fields = dict(bl1=skeleton.bl1, t0=t0, T0=skeleton.T0, t1=skeleton.t1, t_star1=None, bw=bw)

    elif case is CaseLabel.CASE_II:
        t0 = t_zero(params, cap)
        with pipeline_step(STEP_T0):
            curve = waiting_value_curve_case_ii(grid_T1, params, cap, cap_eps)
            T0 = find_T0_case_ii(curve)
        with pipeline_step(STEP_SUB_CAP):
            first = solve_single_cap(uncapped, cap.L1, params, 0.0, settings.single_cap_steps, eps=cap_eps)
        derivative_errors["sub_cap_L1"] = _max(first.derivative_error)
        with pipeline_step(STEP_BL1):
            grid = TimeGrid(0.0, T0, _steps_for(T0, cap.T1, settings.two_level_steps)) if T0 > 0 else None
            solution = solve_bl1_case_ii(
                params,
                grid,
                T0,
                uncapped,
                cap=cap,
                first_cap=first,
                curve=curve,
                t0=t0,
                assume_smooth_fit=settings.assume_smooth_fit,
                eps=boundary_eps,
            )
        _collect_band(solution.induction, residuals, derivative_errors, flagged, notes)
        fields = dict(bl1=solution.bl1, t0=t0, T0=T0, t1=None, t_star1=None)

    else:
        with pipeline_step(STEP_BL1):
            solution = solve_bl1_case_iii(params, grid_T1, uncapped, second, cap=cap, eps=cap_eps)
        residuals["bl1"] = _max(solution.residuals)
        derivative_errors["sub_cap_L1"] = _max(solution.derivative_error)
        flagged.extend(solution.flagged)
        notes.extend(solution.notes)
        notes.append(f"B_L1(T1-)={solution.left_limit:.10g}")
        fields = dict(
            bl1=solution.bl1, t0=None, T0=None, t1=None, t_star1=solution.t_star1, bl1_at_T1=solution.bl1_at_T1
        )

    diagnostics = Diagnostics(residuals, tuple(flagged), tuple(notes), derivative_errors)
    logger.info("solve finished: %d flagged node(s), %d note(s)", len(flagged), len(notes))
    return SolveReport(diagnostics=diagnostics, engine=TwoLevelEngine(second, solution), **base, **fields)


def _collect_band(induction, residuals: dict, derivative_errors: dict, flagged: list, notes: list) -> None:
    if induction is None:
        return
    residuals["bl1"] = _max(induction.residuals)
    derivative_errors["boundary_B_L1"] = _max(induction.derivative_error)
    flagged.extend(induction.flagged)
    notes.extend(induction.notes)
    finite = induction.edge_derivative[np.isfinite(induction.values) & (induction.edge_derivative > 0)]
    if finite.size:
        notes.append(f"C_S(B_L1+) in [{finite.min():.6g}, {finite.max():.6g}]")


def exercise_payoff(S, t: float, cap: TwoLevelCap, params: MarketParams):
    return np.maximum(np.minimum(np.asarray(S, dtype=float), cap.level_at(t)) - params.K, 0.0)


@dataclass(frozen=True)
class PricePoint:
    S: float
    t: float
    price: float
    payoff: float

    @property
    def region(self) -> str:
        return "exercise" if self.price - self.payoff <= 1e-9 * max(self.payoff, 1.0) else "continuation"


def price_points(report: SolveReport, points: Sequence[tuple[float, float]]) -> list[PricePoint]:
    out = []
    for S, t in points:
        price = price_two_level(S, t, report, report.params)
        payoff = float(exercise_payoff(S, t, report.cap, report.params))
        out.append(PricePoint(S, t, max(price, payoff), payoff))
    return out


@dataclass(frozen=True)
class OracleDelta:
    S: float
    t: float
    eep: float
    lattice: float
    right_continuous: Optional[float] = None

    @property
    def delta(self) -> float:
        return self.eep - self.lattice


def oracle_deltas(report: SolveReport, points: Sequence[PricePoint], config: LatticeConfig) -> list[OracleDelta]:
    """Lattice prices next to the EEP prices; case III also reports the right-continuous lattice."""
    cap, params = report.cap, report.params
    deltas = []
    for point in points:
        lattice = lattice_price(point.S, point.t, params, cap, config)
        right = None
        if report.case is CaseLabel.CASE_III:
            right = lattice_price(point.S, point.t, params, replace(cap, continuity=Continuity.RIGHT), config)
        deltas.append(OracleDelta(point.S, point.t, point.price, lattice, right))
        logger.info("oracle S=%.6g t=%.6g: eep %.10g lattice %.10g", point.S, point.t, point.price, lattice)
    return deltas


def derivative_series(report: SolveReport) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per-node one-sided derivatives: C_S(L2-,t), C_S(L1-,t) and C_S(B_L1+,t) where solved."""
    engine: TwoLevelEngine = report.engine
    second = engine.second_cap
    series = {"D_L2": (second.grid.nodes, second.cap_derivative)}
    solution = engine.case_solution
    if isinstance(solution, CaseIIISolution):
        series["D_L1"] = (solution.grid.nodes, solution.sub_cap_derivative)
    elif isinstance(solution, CaseIISolution):
        series["D_L1"] = (solution.first_cap.grid.nodes, solution.first_cap.cap_derivative)
    elif isinstance(solution, CaseISolution) and solution.band is not None:
        series["D_L1"] = (solution.band.grid.nodes, solution.band.sub_cap_derivative)
    induction = getattr(solution, "induction", None)
    if induction is not None:
        series["D_BL1"] = (solution.band.grid.nodes, induction.edge_derivative)
    return series


@dataclass(frozen=True)
class HittingCheck:
    S: float
    t: float
    analytic: float
    estimate: MonteCarloEstimate


def hitting_checks(
    report: SolveReport, points: Sequence[PricePoint], n_paths: int, n_steps: int, seed: int
) -> list[HittingCheck]:
    """Closed-form vs Monte Carlo discounted first passage through L2 before T2 at each query point."""
    cap, params = report.cap, report.params
    checks = []
    for point in points:
        if point.t >= cap.T2 or point.S == cap.L2:
            continue
        analytic = float(discounted_hit_before(point.S, cap.L2, point.t, cap.T2, params))
        estimate = mc_hitting_expectations(
            point.S, cap.L2, point.t, cap.T2, params, np.ones_like, n_paths=n_paths, n_steps=n_steps, seed=seed
        ).hit
        checks.append(HittingCheck(point.S, point.t, analytic, estimate))
    return checks
