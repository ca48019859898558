"""Conditional-gradient descent on the cost with a varying terminal time.

Each iterate linearizes J through c_i = E[H_u - kappa*𝓗_u](t_i), moves toward
the box corner maximizing c_i·u, and backtracks on the true J with tau
recomputed. The same seed is used for every simulation, so all iterates see
common random numbers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.interpolate import interp1d

from .config import ArmijoSettings, MonteCarloSettings, VerificationSettings
from .errors import ConfigError
from .forward import simulate_with_settings, terminal_time
from .grid import ControlBox, ControlPath, TimeGrid
from .problem import FloatArray, ProblemSpec
from .smp import (
    PENALIZED,
    UNPENALIZED,
    CandidateAnalysis,
    SMPReport,
    analyze_candidate,
    verify_analysis,
)
from .variation import cost_functional


logger = logging.getLogger(__name__)

SMP_SATISFIED = "smp-satisfied"
STEP_FLOOR = "step-floor"
MAX_ITERS = "max-iters"
DEGENERATE_ENCOUNTERED = "degenerate-encountered"


@dataclass(frozen=True)
class OptimizerIterate:
    iteration: int
    cost: float
    tau: float
    case: str
    violation: float | None
    step: float

    def row(self) -> list[Any]:
        violation = "" if self.violation is None else self.violation
        return [self.iteration, self.cost, self.tau, self.case, violation, self.step]


@dataclass
class OptimizerTrace:
    iterates: list[OptimizerIterate] = field(default_factory=list)
    reason: str = ""
    report: SMPReport | None = None

    def rows(self) -> list[list[Any]]:
        return [iterate.row() for iterate in self.iterates]

    def to_dict(self) -> dict[str, Any]:
        return {
            "reason": self.reason,
            "iterations": len(self.iterates) - 1,
            "final_cost": self.iterates[-1].cost if self.iterates else None,
            "final_tau": self.iterates[-1].tau if self.iterates else None,
            "report": self.report.to_dict() if self.report else None,
        }


def corner_targets(coefficients: FloatArray, box: ControlBox) -> FloatArray:
    """Per-cell argmax of c·u over the box.

    The upper bound where c > 0, the lower bound where c < 0, the midpoint on ties.
    """
    lower = np.broadcast_to(box.lower, coefficients.shape)
    upper = np.broadcast_to(box.upper, coefficients.shape)
    midpoint = np.broadcast_to(box.midpoint, coefficients.shape)
    return np.where(
        coefficients > 0, upper, np.where(coefficients < 0, lower, midpoint)
    )


def _descent_branch(analysis: CandidateAnalysis) -> str:
    return PENALIZED if PENALIZED in analysis.branches() else UNPENALIZED


def _trial_values(
    current: ControlPath, direction: FloatArray, step: float, cells: int
) -> FloatArray:
    """ū + step*v on cells before tau; later cells continue the last active value."""
    values = np.array(current.values)
    values[:cells] += step * direction[:cells]
    if cells < values.shape[0]:
        values[cells:] = values[cells - 1]
    return values


def _cost(
    spec: ProblemSpec,
    control: ControlPath,
    monte_carlo: MonteCarloSettings,
    case_tol: float | None,
) -> float:
    ensemble = simulate_with_settings(spec, control, monte_carlo)
    ttr = terminal_time(spec, ensemble, case_tol)[2]
    return cost_functional(spec, ensemble, ttr).value


def improve(
    spec: ProblemSpec,
    initial: ControlPath,
    monte_carlo: MonteCarloSettings,
    verification: VerificationSettings | None = None,
    armijo: ArmijoSettings | None = None,
    max_iters: int | None = None,
) -> tuple[ControlPath, OptimizerTrace]:
    """Improve ``initial`` until the maximum principle holds.

    Returns:
        The final control and its trace. On a degenerate iterate the
        lowest-cost control seen so far is returned.
    """
    verification = verification or VerificationSettings()
    armijo = armijo or ArmijoSettings()
    max_iters = armijo.max_iters if max_iters is None else max_iters
    trace = OptimizerTrace()
    control, step = initial, 0.0
    best: tuple[float, ControlPath] | None = None

    for iteration in range(max_iters + 1):
        analysis = analyze_candidate(spec, control, monte_carlo, verification)
        report = verify_analysis(analysis, verification)
        cost = analysis.cost.value
        trace.iterates.append(
            OptimizerIterate(
                iteration=iteration,
                cost=cost,
                tau=analysis.ttr.tau,
                case=analysis.ttr.case.value,
                violation=report.max_violation,
                step=step,
            )
        )
        trace.report = report
        if best is None or cost < best[0]:
            best = (cost, control)
        logger.info(
            "iter %d: J=%.8f tau=%.6f case=%s verdict=%s",
            iteration,
            cost,
            analysis.ttr.tau,
            analysis.ttr.case.value,
            report.verdict,
        )

        if analysis.degenerate:
            trace.reason = DEGENERATE_ENCOUNTERED
            return best[1], trace
        if report.certified:
            trace.reason = SMP_SATISFIED
            return control, trace
        if iteration == max_iters:
            trace.reason = MAX_ITERS
            return control, trace

        branch = _descent_branch(analysis)
        cells = analysis.cells
        c, _ = analysis.coefficients(branch)
        direction = np.zeros_like(control.values)
        direction[:cells] = corner_targets(c, spec.box) - control.values[:cells]
        gain = analysis.directional_gain(direction, branch)
        if gain <= 0.0:
            trace.reason = STEP_FLOOR
            return control, trace

        step = armijo.initial_step
        while step >= armijo.step_floor:
            candidate = ControlPath(
                control.grid, _trial_values(control, direction, step, cells), spec.box
            )
            trial_cost = _cost(spec, candidate, monte_carlo, verification.case_tol)
            if trial_cost <= cost - armijo.slope * step * gain:
                control = candidate
                break
            step *= armijo.shrink
        else:
            trace.reason = STEP_FLOOR
            return control, trace

    trace.reason = MAX_ITERS
    return control, trace


# ============================================================================
# Dynamic-programming oracle
# ============================================================================


@dataclass(frozen=True, eq=False)
class DPResult:
    """Discrete Bellman solution for a fixed horizon."""

    cost: float
    control: ControlPath
    states: FloatArray
    values: FloatArray


def _state_range(
    spec: ProblemSpec, grid: TimeGrid, monte_carlo: MonteCarloSettings
) -> tuple[float, float]:
    """Hull of the trajectories under every constant corner control, padded."""
    finals = []
    for corner in spec.box.corners():
        control = ControlPath.constant(grid, corner, spec.box)
        ensemble = simulate_with_settings(spec, control, monte_carlo)
        finals.append(ensemble.states[0, :, 0])
    stacked = np.concatenate(finals)
    low, high = float(stacked.min()), float(stacked.max())
    pad = 0.1 * max(high - low, 1.0)
    return low - pad, high + pad


def _spline(states: FloatArray, values: FloatArray) -> Any:
    return interp1d(
        states, values, kind="cubic", fill_value="extrapolate", assume_sorted=True
    )


def dp_oracle(
    spec: ProblemSpec,
    grid: TimeGrid,
    state_points: int = 1001,
    control_points: int = 201,
) -> DPResult:
    """Backward Bellman recursion on a state lattice for noise-free scalar problems.

    V_N = Psi and V_i(x) = min_u [f(x, u)dt + V_{i+1}(x + b(x, u)dt)] with
    V_{i+1} interpolated by cubic splines. The optimal control is read off by
    a forward greedy pass.

    Raises:
        ConfigError: The problem has noise or a state dimension other than 1
    """
    if not spec.noise_free or spec.state_dim != 1:
        raise ConfigError(
            "🚫 CONFIG ERROR: dp_oracle handles noise-free problems "
            "with scalar state",
            key_path="problem",
        )
    monte_carlo = MonteCarloSettings(grid=max(grid.steps, 10), paths=1)
    low, high = _state_range(spec, grid, monte_carlo)
    states = np.linspace(low, high, state_points)
    controls = spec.box.lattice(control_points)
    dt = grid.dt
    count, choices = states.size, controls.shape[0]
    x = np.repeat(states, choices)[:, None]
    u = np.tile(controls, (count, 1))
    running = (spec.f(x, u) * dt).reshape(count, choices)
    moved = (x + spec.b(x, u) * dt)[:, 0].reshape(count, choices)

    values = np.empty((grid.steps + 1, count))
    values[-1] = spec.psi(states[:, None])
    for i in reversed(range(grid.steps)):
        ahead = _spline(states, values[i + 1])
        values[i] = (running + ahead(moved)).min(axis=1)

    path = np.empty((grid.steps, spec.control_dim))
    position = np.array(spec.x0, dtype=float)[None, :]
    for i in range(grid.steps):
        ahead = _spline(states, values[i + 1])
        here = np.repeat(position, choices, axis=0)
        moved_here = (here + spec.b(here, controls) * dt)[:, 0]
        candidates = spec.f(here, controls) * dt + ahead(moved_here)
        best = int(np.argmin(candidates))
        path[i] = controls[best]
        position = position + spec.b(position, controls[best][None, :]) * dt

    start = interp1d(states, values[0], kind="cubic", assume_sorted=True)
    cost = float(start(spec.x0[0]))
    logger.info("dp oracle: J=%.8f on %d states x %d controls", cost, count, choices)
    return DPResult(cost, ControlPath(grid, path, spec.box), states, values)
