"""Forward simulation, mean constraint curve, rate curve and terminal time.

Random streams are organised in fixed blocks of BLOCK_SIZE paths. Block b
draws from ``default_rng(SeedSequence(seed, spawn_key=(b,)))`` so increment
ΔW[p][i] depends on (seed, p, i) only, and results do not depend on the
number of worker threads.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np

from .config import BLOCK_SIZE, MonteCarloSettings, Scheme
from .error_messages import DiagnosticMessages
from .errors import ConfigError, ContractError, SimulationError
from .grid import ControlPath, TimeGrid, TruncatedGrid
from .problem import FloatArray, ProblemSpec


logger = logging.getLogger(__name__)

# Absolute floor in the crossing test m_i >= alpha; absorbs summation round-off.
CROSSING_ATOL = 1e-9
DEGENERACY_RELATIVE = 1e-3
WINDOW_STEPS = 5


class Case(str, Enum):
    """Terminal-time regimes: interior crossing, crossing at T, no crossing."""

    I = "I"  # noqa: E741
    II = "II"
    III = "III"


# ============================================================================
# Path ensembles
# ============================================================================


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Monte Carlo trajectories on a grid.

    Attributes:
        states: (M, N+1, m) array with states[:, 0] = x0
        increments: (M, N, d) Brownian increments (zeros in deterministic
            mode), or None when not retained
    """

    grid: TimeGrid
    control: ControlPath
    states: FloatArray
    increments: FloatArray | None
    seed: int
    scheme: Scheme = Scheme.EULER
    threads: int = 1
    deterministic: bool = False

    @property
    def path_count(self) -> int:
        return int(self.states.shape[0])

    def require_increments(self) -> FloatArray:
        if self.increments is None:
            raise ContractError(
                "🚫 CONTRACT ERROR: ensemble was simulated with "
                "retain_increments=False; Brownian increments are unavailable"
            )
        return self.increments


def _repeat_rows(row: FloatArray, count: int) -> FloatArray:
    return np.repeat(row[None, :], count, axis=0)


def _rk4_step(
    spec: ProblemSpec, x: FloatArray, u: FloatArray, width: float
) -> FloatArray:
    k1 = spec.b(x, u)
    k2 = spec.b(x + 0.5 * width * k1, u)
    k3 = spec.b(x + 0.5 * width * k2, u)
    k4 = spec.b(x + width * k3, u)
    return x + width / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _integrate(
    spec: ProblemSpec,
    values: FloatArray,
    increments: FloatArray | None,
    count: int,
    dt: float,
    scheme: Scheme,
    offset: int,
) -> FloatArray:
    steps = values.shape[0]
    states = np.empty((count, steps + 1, spec.state_dim))
    x = _repeat_rows(spec.x0, count)
    states[:, 0] = x
    for i in range(steps):
        u = _repeat_rows(values[i], count)
        if scheme is Scheme.RK4:
            x_next = _rk4_step(spec, x, u, dt)
        else:
            x_next = x + spec.b(x, u) * dt
            if increments is not None:
                noise = np.einsum("nmd,nd->nm", spec.sigma(x, u), increments[:, i])
                x_next = x_next + noise
        finite = np.isfinite(x_next).all(axis=1)
        if not finite.all():
            path = offset + int(np.flatnonzero(~finite)[0])
            raise SimulationError(
                DiagnosticMessages.nonfinite_state(path, i + 1, (i + 1) * dt),
                path=path,
                node=i + 1,
            )
        states[:, i + 1] = x_next
        x = x_next
    return states


def _blocks(path_count: int) -> list[tuple[int, int, int]]:
    return [
        (index, start, min(start + BLOCK_SIZE, path_count))
        for index, start in enumerate(range(0, path_count, BLOCK_SIZE))
    ]


def _draw_increments(
    seed: int, path_count: int, steps: int, noise_dim: int, dt: float, threads: int
) -> FloatArray:
    scale = math.sqrt(dt)

    def draw(block: tuple[int, int, int]) -> FloatArray:
        index, start, stop = block
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
        return rng.standard_normal((stop - start, steps, noise_dim)) * scale

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.concatenate(list(pool.map(draw, _blocks(path_count))), axis=0)


def _propagate(
    spec: ProblemSpec,
    control: ControlPath,
    increments: FloatArray | None,
    path_count: int,
    scheme: Scheme,
    threads: int,
) -> FloatArray:
    dt = control.grid.dt
    if increments is None:
        single = _integrate(spec, control.values, None, 1, dt, scheme, 0)
        return np.repeat(single, path_count, axis=0)

    def work(
        block: tuple[int, int, int],
    ) -> tuple[FloatArray | None, SimulationError | None]:
        _, start, stop = block
        try:
            states = _integrate(
                spec,
                control.values,
                increments[start:stop],
                stop - start,
                dt,
                scheme,
                start,
            )
        except SimulationError as e:
            return None, e
        return states, None

    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(work, _blocks(path_count)))
    errors = [error for _, error in results if error is not None]
    if errors:
        raise min(errors, key=lambda error: (error.node, error.path))
    blocks = [states for states, _ in results if states is not None]
    return np.concatenate(blocks, axis=0)


def simulate(
    spec: ProblemSpec,
    control: ControlPath,
    grid: TimeGrid,
    path_count: int,
    seed: int,
    *,
    scheme: Scheme = Scheme.EULER,
    threads: int = 1,
    retain_increments: bool = True,
) -> PathEnsemble:
    """Simulate the controlled state equation.

    Euler–Maruyama X_{i+1} = X_i + b(X_i, u_i)Δt + σ(X_i, u_i)ΔW_i. Noise-free
    problems use the same recursion with ΔW = 0, or RK4 per cell with
    ``scheme=Scheme.RK4``.

    Raises:
        GridMismatchError: Control lives on another grid
        ConfigError: M < 1, or RK4 requested for a problem with noise
        SimulationError: A state overflowed; names the earliest node, then
            the lowest path
    """
    grid.require_same(control.grid)
    if control.control_dim != spec.control_dim:
        raise ConfigError(
            f"🚫 CONFIG ERROR: control has {control.control_dim} coordinates, "
            f"problem expects {spec.control_dim}",
            key_path="control",
        )
    if path_count < 1:
        raise ConfigError(
            f"🚫 CONFIG ERROR: paths M = {path_count} < 1",
            key_path="monte_carlo.paths",
        )
    scheme = Scheme(scheme)
    if scheme is Scheme.RK4 and not spec.noise_free:
        raise ConfigError(
            f"🚫 CONFIG ERROR: scheme 'rk4' needs a noise-free problem; "
            f"'{spec.name}' has diffusion",
            key_path="monte_carlo.scheme",
        )

    if spec.noise_free:
        noise = None
        stored: FloatArray | None = None
        if retain_increments:
            stored = np.zeros((path_count, grid.steps, spec.noise_dim))
    else:
        noise = _draw_increments(
            seed, path_count, grid.steps, spec.noise_dim, grid.dt, threads
        )
        stored = noise if retain_increments else None

    states = _propagate(spec, control, noise, path_count, scheme, threads)
    logger.debug(
        "simulated %s: M=%d N=%d scheme=%s",
        spec.name,
        path_count,
        grid.steps,
        scheme.value,
    )
    return PathEnsemble(
        grid=grid,
        control=control,
        states=states,
        increments=stored,
        seed=seed,
        scheme=scheme,
        threads=threads,
        deterministic=spec.noise_free,
    )


def simulate_with_settings(
    spec: ProblemSpec, control: ControlPath, settings: MonteCarloSettings
) -> PathEnsemble:
    """``simulate`` driven by MonteCarloSettings."""
    return simulate(
        spec,
        control,
        control.grid,
        settings.resolve_paths(spec.noise_free),
        settings.seed,
        scheme=settings.scheme,
        threads=settings.threads,
        retain_increments=settings.retain_increments,
    )


def resimulate_with_control(
    base: PathEnsemble, spec: ProblemSpec, control2: ControlPath
) -> PathEnsemble:
    """Recompute states under ``control2`` with base's Brownian increments."""
    base.grid.require_same(control2.grid)
    increments = base.require_increments()
    states = _propagate(
        spec,
        control2,
        None if base.deterministic else increments,
        base.path_count,
        base.scheme,
        base.threads,
    )
    return dataclasses.replace(base, control=control2, states=states)


# ============================================================================
# Interpolation inside a cell
# ============================================================================


def hermite(
    z0: FloatArray, z1: FloatArray, d0: FloatArray, d1: FloatArray, dt: float, s: float
) -> FloatArray:
    """Cubic Hermite interpolant at fraction s of a cell of width dt."""
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * z0 + h10 * dt * d0 + h01 * z1 + h11 * dt * d1


def cell_states(
    spec: ProblemSpec, ensemble: PathEnsemble, cell: int, fraction: float
) -> FloatArray:
    """States at t_cell + fraction*dt: linear (Euler) or Hermite (RK4)."""
    x0 = ensemble.states[:, cell]
    x1 = ensemble.states[:, cell + 1]
    if ensemble.scheme is Scheme.RK4:
        u = _repeat_rows(ensemble.control.values[cell], ensemble.path_count)
        return hermite(x0, x1, spec.b(x0, u), spec.b(x1, u), ensemble.grid.dt, fraction)
    return x0 + fraction * (x1 - x0)


def cell_controls(
    control: ControlPath, count: int, cells: int | None = None
) -> FloatArray:
    """Cell controls broadcast to (count, cells, k)."""
    values = control.values if cells is None else control.values[:cells]
    return np.broadcast_to(values, (count, *values.shape))


def flat_eval(
    fn: Callable[..., FloatArray], *arrays: FloatArray
) -> FloatArray:
    """Evaluate a batched coefficient on (M, L, ...) arrays by flattening (M, L)."""
    lead = arrays[0].shape[:2]
    flat = [np.ascontiguousarray(a).reshape(-1, *a.shape[2:]) for a in arrays]
    out = np.asarray(fn(*flat), dtype=float)
    return out.reshape(*lead, *out.shape[1:])


# ============================================================================
# Mean and rate curves
# ============================================================================


@dataclass(frozen=True, eq=False)
class MeanCurve:
    """Estimate of m(t_i) = E[Phi(X(t_i))] with standard errors."""

    grid: TimeGrid
    values: FloatArray
    se: FloatArray

    def rows(self) -> list[tuple[float, float, float]]:
        return [
            (float(t), float(m), float(s))
            for t, m, s in zip(self.grid.nodes, self.values, self.se, strict=True)
        ]


@dataclass(frozen=True, eq=False)
class RateCurve:
    """Estimate of h(t_i) as right limits (control u_i) and left limits (u_{i-1})."""

    grid: TimeGrid
    right: FloatArray
    left: FloatArray
    right_se: FloatArray
    left_se: FloatArray
    scheme: Scheme = Scheme.EULER

    def at(self, cell: int, fraction: float) -> float:
        """h at t_cell + fraction*dt using the control of that cell."""
        return float(
            self.right[cell] + fraction * (self.left[cell + 1] - self.right[cell])
        )

    def rows(self) -> list[tuple[float, float, float]]:
        return [
            (float(t), float(h), float(s))
            for t, h, s in zip(self.grid.nodes, self.right, self.right_se, strict=True)
        ]


def _standard_error(samples: FloatArray, deterministic: bool) -> FloatArray:
    count = samples.shape[0]
    if deterministic or count < 2:
        return np.zeros(samples.shape[1:])
    return samples.std(axis=0, ddof=1) / math.sqrt(count)


def generator(
    grad: FloatArray, hess: FloatArray, drift: FloatArray, diffusion: FloatArray
) -> FloatArray:
    """grad·b + ½ Σ_j σ^jᵀ hess σ^j, batched over the leading axis."""
    first = np.einsum("nm,nm->n", grad, drift)
    second = 0.5 * np.einsum("nid,nij,njd->n", diffusion, hess, diffusion)
    return first + second


def right_left_controls(control: ControlPath) -> tuple[FloatArray, FloatArray]:
    """Node controls (N+1, k) as (right limits, left limits).

    Right limits are u_i with u_{N-1} at t_N; left limits are u_{i-1} with u_0 at t_0.
    """
    values = control.values
    return (
        np.concatenate([values, values[-1:]], axis=0),
        np.concatenate([values[:1], values], axis=0),
    )


def rate_samples(
    spec: ProblemSpec, ensemble: PathEnsemble, control: ControlPath | None = None
) -> tuple[FloatArray, FloatArray]:
    """Per-path h at nodes as (right, left), each (M, N+1)."""
    control = control or ensemble.control
    ensemble.grid.require_same(control.grid)
    right_u, left_u = right_left_controls(control)
    count = ensemble.path_count
    states = ensemble.states

    def rate(x: FloatArray, u: FloatArray) -> FloatArray:
        return generator(spec.phi_x(x), spec.phi_xx(x), spec.b(x, u), spec.sigma(x, u))

    right = flat_eval(rate, states, np.broadcast_to(right_u, (count, *right_u.shape)))
    left = flat_eval(rate, states, np.broadcast_to(left_u, (count, *left_u.shape)))
    return right, left


def mean_phi(ensemble: PathEnsemble, spec: ProblemSpec) -> MeanCurve:
    """m_i = mean of Phi(X[p][i]) with m_0 = Phi(x0) exactly."""
    samples = flat_eval(spec.phi, ensemble.states)
    values = samples.mean(axis=0)
    values[0] = spec.phi_x0
    se = _standard_error(samples, ensemble.deterministic)
    return MeanCurve(ensemble.grid, values, se)


def h_curve(
    ensemble: PathEnsemble, spec: ProblemSpec, control: ControlPath | None = None
) -> RateCurve:
    """Estimate h(t) = E[Phi_xᵀ b + ½ Σ σ^jᵀ Phi_xx σ^j] at the nodes."""
    right, left = rate_samples(spec, ensemble, control)
    return RateCurve(
        grid=ensemble.grid,
        right=right.mean(axis=0),
        left=left.mean(axis=0),
        right_se=_standard_error(right, ensemble.deterministic),
        left_se=_standard_error(left, ensemble.deterministic),
        scheme=ensemble.scheme,
    )


def cumulative_rate(rate: RateCurve) -> FloatArray:
    """Running integral of h from 0 to each node with the scheme's quadrature."""
    dt = rate.grid.dt
    if rate.scheme is Scheme.RK4:
        increments = 0.5 * (rate.right[:-1] + rate.left[1:]) * dt
    else:
        increments = rate.right[:-1] * dt
    return np.concatenate([[0.0], np.cumsum(increments)])


def mean_rate_crosscheck(mean: MeanCurve, rate: RateCurve, spec: ProblemSpec) -> float:
    """max_i |m_i - Phi(x0) - ∫_0^{t_i} h dt|."""
    mean.grid.require_same(rate.grid)
    defect = mean.values - spec.phi_x0 - cumulative_rate(rate)
    return float(np.max(np.abs(defect)))


# ============================================================================
# Terminal time
# ============================================================================


@dataclass(frozen=True)
class TerminalTimeResult:
    """Terminal time tau with its case and the rate diagnostics at tau.

    ``cell`` and ``fraction`` locate tau = t_cell + fraction*dt; every
    downstream integral over [0, tau] uses them.
    """

    grid: TimeGrid
    tau: float
    case: Case
    cell: int
    fraction: float
    crossing_index: int | None
    h_at_tau: float
    degenerate_h: bool
    h_discontinuous: bool
    alpha_gap: float
    degeneracy_threshold: float
    jump_statistic: float
    jump_threshold: float
    case_tol: float

    @property
    def truncated(self) -> TruncatedGrid:
        return TruncatedGrid(self.grid, self.cell, self.fraction)

    @property
    def needs_rate_hypotheses(self) -> bool:
        return self.case is not Case.III

    def flags(self) -> list[str]:
        flags = []
        if self.degenerate_h:
            flags.append("degenerate_h")
        if self.h_discontinuous:
            flags.append("h_discontinuous")
        return flags

    def to_dict(self) -> dict[str, Any]:
        return {
            "tau": self.tau,
            "case": self.case.value,
            "crossing_index": self.crossing_index,
            "h_at_tau": self.h_at_tau,
            "degenerate_h": self.degenerate_h,
            "h_discontinuous": self.h_discontinuous,
            "alpha_gap": self.alpha_gap,
            "degeneracy_threshold": self.degeneracy_threshold,
            "jump_statistic": self.jump_statistic,
            "jump_threshold": self.jump_threshold,
            "case_tol": self.case_tol,
        }


def _median_step(values: FloatArray) -> float:
    if values.size < 2:
        return 0.0
    return float(np.median(np.abs(np.diff(values))))


def _degeneracy_threshold(rate: RateCurve, tau: float) -> float:
    nodes = rate.grid.nodes
    window = np.abs(nodes - tau) <= WINDOW_STEPS * rate.grid.dt * (1 + 1e-9)
    scale = max(float(np.max(np.abs(rate.right))), float(np.max(np.abs(rate.left))))
    return DEGENERACY_RELATIVE * scale + 2.0 * _median_step(rate.right[window])


def _jump_statistic(rate: RateCurve, cell: int) -> tuple[float, float]:
    """|mean(h left of tau) - mean(h right of tau)| over WINDOW_STEPS nodes each."""
    first = cell + 1
    lo = max(0, first - WINDOW_STEPS)
    hi = min(rate.grid.steps + 1, first + WINDOW_STEPS)
    left_window = rate.right[lo:first]
    right_window = rate.right[first:hi]
    if left_window.size == 0 or right_window.size == 0:
        return 0.0, math.inf
    jump = abs(float(left_window.mean()) - float(right_window.mean()))
    local_se = math.hypot(
        float(rate.right_se[lo:first].mean()), float(rate.right_se[first:hi].mean())
    )
    threshold = 5.0 * local_se + 10.0 * _median_step(rate.right[lo:hi])
    return jump, threshold


def hitting_time(
    mean: MeanCurve,
    rate: RateCurve,
    spec: ProblemSpec,
    case_tol: float | None = None,
) -> TerminalTimeResult:
    """Locate the first time the mean curve reaches alpha and classify the case.

    The first node i >= 1 with m_i >= alpha - CROSSING_ATOL brackets the
    crossing; tau is interpolated linearly in [t_{i-1}, t_i]. Case I if
    tau < T - case_tol. Otherwise case II when a crossing exists, or when
    |m(T) - alpha| <= case_tol*max|h near T| + 3*se(T); else case III. In
    cases II and III tau = T.

    Args:
        mean: Mean constraint curve
        rate: Rate curve on the same grid
        spec: Problem (for alpha)
        case_tol: Time tolerance for case II (default 2Δt)

    Raises:
        ContractError: The mean curve is not finite
    """
    grid = mean.grid
    grid.require_same(rate.grid)
    finite = np.isfinite(mean.values)
    if not finite.all():
        node = int(np.flatnonzero(~finite)[0])
        raise ContractError(
            f"🚫 CONTRACT ERROR: mean curve is not finite at node {node}",
            key_path=f"m[{node}]",
        )
    dt, horizon, steps = grid.dt, grid.horizon, grid.steps
    case_tol = 2.0 * dt if case_tol is None else case_tol
    if case_tol <= 0:
        raise ConfigError(
            f"🚫 CONFIG ERROR: case_tol {case_tol!r} must be positive",
            key_path="verification.case_tol",
        )

    hits = np.flatnonzero(mean.values[1:] >= spec.alpha - CROSSING_ATOL)
    crossing = int(hits[0]) + 1 if hits.size else None
    case = Case.III
    cell, fraction = steps - 1, 1.0
    if crossing is not None:
        below, above = mean.values[crossing - 1], mean.values[crossing]
        theta = (spec.alpha - below) / (above - below) if above > below else 1.0
        theta = float(min(1.0, max(0.0, theta)))
        crossing_time = grid.nodes[crossing - 1] + theta * dt
        if crossing_time < horizon - case_tol:
            case, cell, fraction = Case.I, crossing - 1, theta
        else:
            case = Case.II
    else:
        near = grid.nodes >= horizon - case_tol - 1e-12 * horizon
        h_scale = max(
            float(np.max(np.abs(rate.right[near]))),
            float(np.max(np.abs(rate.left[near]))),
        )
        gap = abs(float(mean.values[-1]) - spec.alpha)
        if gap <= case_tol * h_scale + 3.0 * float(mean.se[-1]):
            case = Case.II

    tau = float(grid.nodes[cell] + fraction * dt) if case is Case.I else horizon
    h_at_tau = rate.at(cell, fraction)
    degeneracy_threshold = _degeneracy_threshold(rate, tau)
    jump, jump_threshold = _jump_statistic(rate, cell)
    result = TerminalTimeResult(
        grid=grid,
        tau=tau,
        case=case,
        cell=cell,
        fraction=fraction,
        crossing_index=crossing,
        h_at_tau=h_at_tau,
        degenerate_h=abs(h_at_tau) < degeneracy_threshold,
        h_discontinuous=jump > jump_threshold,
        alpha_gap=float(mean.values[-1]) - spec.alpha,
        degeneracy_threshold=degeneracy_threshold,
        jump_statistic=jump,
        jump_threshold=jump_threshold,
        case_tol=case_tol,
    )
    logger.info(
        "tau=%.6f case=%s h(tau)=%.6g flags=%s",
        result.tau,
        result.case.value,
        result.h_at_tau,
        result.flags() or "none",
    )
    return result


def terminal_time(
    spec: ProblemSpec, ensemble: PathEnsemble, case_tol: float | None = None
) -> tuple[MeanCurve, RateCurve, TerminalTimeResult]:
    """mean_phi, h_curve and hitting_time in one call."""
    mean = mean_phi(ensemble, spec)
    rate = h_curve(ensemble, spec)
    return mean, rate, hitting_time(mean, rate, spec, case_tol)


def ensemble_summary(ensemble: PathEnsemble) -> list[list[float]]:
    """Rows ``t, mean_1..mean_m, std_1..std_m``."""
    means = ensemble.states.mean(axis=0)
    if ensemble.path_count > 1:
        stds = ensemble.states.std(axis=0, ddof=1)
    else:
        stds = np.zeros_like(means)
    return [
        [float(t), *means[i].tolist(), *stds[i].tolist()]
        for i, t in enumerate(ensemble.grid.nodes)
    ]


# ============================================================================
# Quadrature on [0, tau]
# ============================================================================


def integrate_to_tau(
    start: FloatArray, end: FloatArray, ttr: TerminalTimeResult, scheme: Scheme
) -> FloatArray:
    """Integrate a per-cell integrand over [0, tau] along the last axis.

    ``start[..., i]`` is the integrand at t_i and ``end[..., i]`` at t_{i+1},
    both with the control of cell i. Euler uses the left endpoint, RK4 the
    trapezoid rule; the cell holding tau contributes its fraction.
    """
    cell, fraction, dt = ttr.cell, ttr.fraction, ttr.grid.dt
    if Scheme(scheme) is Scheme.RK4:
        full = 0.5 * dt * (start[..., :cell] + end[..., :cell]).sum(axis=-1)
        at_tau = start[..., cell] + fraction * (end[..., cell] - start[..., cell])
        return full + 0.5 * fraction * dt * (start[..., cell] + at_tau)
    return dt * start[..., :cell].sum(axis=-1) + fraction * dt * start[..., cell]


def interpolate_at_tau(values: FloatArray, ttr: TerminalTimeResult) -> FloatArray:
    """Linear interpolation of nodal values (node axis 1) at tau."""
    lo = values[:, ttr.cell]
    return lo + ttr.fraction * (values[:, ttr.cell + 1] - lo)
