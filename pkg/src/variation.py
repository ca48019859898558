"""First-order variations: y, h̄, the terminal-time derivative and the cost derivative.

All functions take a base PathEnsemble and reuse its Brownian increments, so
finite-difference oracles and their analytic counterparts see the same noise.
Directions are ControlPaths without a box.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .config import MonteCarloSettings, Scheme
from .error_messages import DiagnosticMessages
from .errors import ConfigError, DegenerateRateError, DiscontinuityError
from .forward import (
    Case,
    PathEnsemble,
    RateCurve,
    TerminalTimeResult,
    cell_controls,
    cell_states,
    generator,
    integrate_to_tau,
    interpolate_at_tau,
    resimulate_with_control,
    right_left_controls,
    simulate_with_settings,
    terminal_time,
)
from .grid import ControlPath, TimeGrid
from .problem import FloatArray, ProblemSpec


logger = logging.getLogger(__name__)

# Taylor defects at or below this level are round-off, not first-order error.
DEFECT_FLOOR = 1e-9


@dataclass(frozen=True, eq=False)
class VariationalEnsemble:
    """y[p][i] aligned path-by-path with the base ensemble; y[:, 0] = 0."""

    grid: TimeGrid
    direction: ControlPath
    y: FloatArray


class DirectionalRate(RateCurve):
    """h̄(v, t_i) at the nodes as right and left limits, with standard errors."""


@dataclass(frozen=True)
class TauDerivativeResult:
    """d tau in direction v; case II carries both candidates (value, 0)."""

    case: Case
    value: float
    integral: float
    h_at_tau: float
    candidates: tuple[float, float] | None = None

    @property
    def ambiguous(self) -> bool:
        return self.candidates is not None

    def to_dict(self) -> dict[str, Any]:
        return {
            "case": self.case.value,
            "value": self.value,
            "integral": self.integral,
            "h_at_tau": self.h_at_tau,
            "ambiguous": self.ambiguous,
            "candidates": list(self.candidates) if self.candidates else None,
        }


@dataclass(frozen=True)
class CostVariationResult:
    """Directional derivative of J split into its four components.

    In case II the penalized branch is reported with the unpenalized branch
    attached as ``alternative``.
    """

    case: Case
    penalty_psi: float
    penalty_f: float
    terminal: float
    running: float
    se: float = 0.0
    branch: str = "penalized"
    alternative: CostVariationResult | None = None

    @property
    def total(self) -> float:
        return self.penalty_psi + self.penalty_f + self.terminal + self.running

    @property
    def ambiguous(self) -> bool:
        return self.alternative is not None

    def rows(self) -> list[tuple[str, float]]:
        rows = [
            ("penalty_psi", self.penalty_psi),
            ("penalty_f", self.penalty_f),
            ("terminal", self.terminal),
            ("running", self.running),
            ("total", self.total),
        ]
        if self.alternative is not None:
            rows.append((f"total_{self.alternative.branch}", self.alternative.total))
        return rows

    def to_dict(self) -> dict[str, Any]:
        result: dict[str, Any] = {
            "case": self.case.value,
            "branch": self.branch,
            "penalty_psi": self.penalty_psi,
            "penalty_f": self.penalty_f,
            "terminal": self.terminal,
            "running": self.running,
            "total": self.total,
            "se": self.se,
        }
        if self.alternative is not None:
            result["alternative"] = self.alternative.to_dict()
        return result


@dataclass(frozen=True)
class CostEstimate:
    value: float
    se: float


@dataclass(frozen=True)
class QuotientRow:
    rho: float
    value: float
    quotient: float


@dataclass(frozen=True)
class QuotientTable:
    """Signed-rho difference quotients with Richardson limits per side."""

    base_value: float
    rows: list[QuotientRow] = field(default_factory=list)

    def side(self, sign: int) -> list[QuotientRow]:
        return [row for row in self.rows if math.copysign(1.0, row.rho) == sign]

    def limit(self, sign: int) -> float | None:
        """Richardson limit on one side; None when that side has no rows."""
        rows = self.side(sign)
        if not rows:
            return None
        if len(rows) == 1:
            return rows[0].quotient
        return richardson_limit([r.rho for r in rows], [r.quotient for r in rows])

    def csv_rows(self) -> list[tuple[float, float]]:
        return [(row.rho, row.quotient) for row in self.rows]

    def to_dict(self) -> dict[str, Any]:
        return {
            "base_value": self.base_value,
            "rows": [
                {"rho": r.rho, "value": r.value, "quotient": r.quotient}
                for r in self.rows
            ],
            "limit_positive": self.limit(1),
            "limit_negative": self.limit(-1),
        }


@dataclass(frozen=True)
class PenaltyCoefficients:
    """Psi-tilde, E f and h at tau; kappa = (Psi-tilde + E f)/h(tau)."""

    psi_tilde: float
    f_at_tau: float
    h_at_tau: float

    @property
    def kappa_psi(self) -> float:
        return self.psi_tilde / self.h_at_tau

    @property
    def kappa_f(self) -> float:
        return self.f_at_tau / self.h_at_tau

    @property
    def kappa(self) -> float:
        return self.kappa_psi + self.kappa_f


def richardson_limit(rhos: Sequence[float], values: Sequence[float]) -> float:
    """First-order extrapolation to rho = 0 from the two smallest |rho| (same sign)."""
    if len(rhos) < 2:
        raise ConfigError(
            "🚫 CONFIG ERROR: Richardson extrapolation needs two rho values"
        )
    order = sorted(range(len(rhos)), key=lambda index: abs(rhos[index]))
    small, big = order[0], order[1]
    ratio = abs(rhos[big]) / abs(rhos[small])
    if ratio == 1.0:
        return float(values[small])
    return float((ratio * values[small] - values[big]) / (ratio - 1.0))


# ============================================================================
# Variational process
# ============================================================================


def _direction_values(base: PathEnsemble, direction: ControlPath) -> FloatArray:
    base.grid.require_same(direction.grid)
    return np.asarray(direction.values, dtype=float)


def _linear_rhs(
    a: FloatArray, bu: FloatArray, y: FloatArray, v: FloatArray
) -> FloatArray:
    return np.einsum("nab,nqb->nqa", a, y) + np.einsum("nak,qk->nqa", bu, v)


def propagate_variations(
    spec: ProblemSpec, base: PathEnsemble, directions: FloatArray
) -> FloatArray:
    """Variational processes for a batch of directions.

    Args:
        directions: (B, N, k) cell values

    Returns:
        (M, B, N+1, m) array; Euler–Maruyama on dy = [b_x y + b_u v]dt +
        Σ_j [σ_x^j y + σ_u^j v]dW^j with the base increments, or the tangent
        of the RK4 step in RK4 mode.
    """
    increments = base.require_increments()
    count, steps, dt = base.path_count, base.grid.steps, base.grid.dt
    batch = directions.shape[0]
    y = np.zeros((count, batch, steps + 1, spec.state_dim))
    controls = base.control.values
    for i in range(steps):
        x = base.states[:, i]
        u = np.repeat(controls[i][None, :], count, axis=0)
        v = directions[:, i]
        current = y[:, :, i]
        if base.scheme is Scheme.RK4:
            k1 = spec.b(x, u)
            s2 = x + 0.5 * dt * k1
            s3 = x + 0.5 * dt * spec.b(s2, u)
            s4 = x + dt * spec.b(s3, u)
            d1 = _linear_rhs(spec.b_x(x, u), spec.b_u(x, u), current, v)
            d2 = _linear_rhs(
                spec.b_x(s2, u), spec.b_u(s2, u), current + 0.5 * dt * d1, v
            )
            d3 = _linear_rhs(
                spec.b_x(s3, u), spec.b_u(s3, u), current + 0.5 * dt * d2, v
            )
            d4 = _linear_rhs(spec.b_x(s4, u), spec.b_u(s4, u), current + dt * d3, v)
            y[:, :, i + 1] = current + dt / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
            continue
        step = current + dt * _linear_rhs(spec.b_x(x, u), spec.b_u(x, u), current, v)
        if not base.deterministic:
            dw = increments[:, i]
            step += np.einsum("njab,nqb,nj->nqa", spec.sigma_x(x, u), current, dw)
            step += np.einsum("njak,qk,nj->nqa", spec.sigma_u(x, u), v, dw)
        y[:, :, i + 1] = step
    return y


def variational_paths(
    spec: ProblemSpec, base: PathEnsemble, direction: ControlPath
) -> VariationalEnsemble:
    """y for one direction v, driven by base's Brownian increments."""
    values = _direction_values(base, direction)
    y = propagate_variations(spec, base, values[None])[:, 0]
    return VariationalEnsemble(base.grid, direction, y)


def taylor_expansion_check(
    spec: ProblemSpec,
    base: PathEnsemble,
    direction: ControlPath,
    rho_list: Sequence[float],
    variational: VariationalEnsemble | None = None,
) -> list[tuple[float, float]]:
    """sup_t mean_p |(X^rho - X)/rho - y| for each rho, with common random numbers.

    Raises:
        BoxViolationError: u + rho*v leaves the control box
    """
    y = (variational or variational_paths(spec, base, direction)).y
    rows = []
    for rho in rho_list:
        perturbed = base.control.perturbed(direction, rho, spec.box)
        moved = resimulate_with_control(base, spec, perturbed)
        error = np.linalg.norm((moved.states - base.states) / rho - y, axis=-1)
        rows.append((float(rho), float(error.mean(axis=0).max())))
    logger.debug("taylor defects: %s", rows)
    return rows


def defect_ratios(
    rows: Sequence[tuple[float, float]], floor: float = DEFECT_FLOOR
) -> list[float]:
    """Successive defect ratios, skipping pairs whose larger defect is at the floor."""
    return [
        current / previous
        for (_, previous), (_, current) in zip(rows, rows[1:], strict=False)
        if previous > floor
    ]


# ============================================================================
# Directional rate h̄
# ============================================================================


def rate_derivatives(
    spec: ProblemSpec, x: FloatArray, u: FloatArray
) -> tuple[FloatArray, FloatArray]:
    """Gradients g_x (n, m) and g_u (n, k) of the rate integrand g.

    g = Phi_xᵀb + ½Σσʲᵀ Phi_xx σʲ.
    """
    grad = spec.phi_x(x)
    hess = spec.phi_xx(x)
    g_x = np.einsum("nab,nb->na", hess, spec.b(x, u))
    g_x += np.einsum("nba,nb->na", spec.b_x(x, u), grad)
    g_u = np.einsum("nbk,nb->nk", spec.b_u(x, u), grad)
    if not spec.noise_free:
        sigma = spec.sigma(x, u)
        g_x += 0.5 * np.einsum("nbca,nbj,ncj->na", spec.phi_xxx(x), sigma, sigma)
        g_x += np.einsum("njba,nbc,ncj->na", spec.sigma_x(x, u), hess, sigma)
        g_u += np.einsum("njbk,nbc,ncj->nk", spec.sigma_u(x, u), hess, sigma)
    return g_x, g_u


def _node_gradients(
    spec: ProblemSpec, base: PathEnsemble, node_controls: FloatArray
) -> tuple[FloatArray, FloatArray]:
    count, nodes, dim = base.states.shape
    x = base.states.reshape(-1, dim)
    u = np.broadcast_to(node_controls, (count, *node_controls.shape)).reshape(
        -1, spec.control_dim
    )
    g_x, g_u = rate_derivatives(spec, x, u)
    return g_x.reshape(count, nodes, dim), g_u.reshape(count, nodes, spec.control_dim)


def hbar_samples(
    spec: ProblemSpec, base: PathEnsemble, y: FloatArray, directions: FloatArray
) -> tuple[FloatArray, FloatArray]:
    """Per-path h̄ at nodes, (right, left) each (M, B, N+1)."""
    right_u, left_u = right_left_controls(base.control)
    right_v = np.concatenate([directions, directions[:, -1:]], axis=1)
    left_v = np.concatenate([directions[:, :1], directions], axis=1)
    samples = []
    for controls, v in ((right_u, right_v), (left_u, left_v)):
        g_x, g_u = _node_gradients(spec, base, controls)
        value = np.einsum("nim,nqim->nqi", g_x, y)
        value += np.einsum("nik,qik->nqi", g_u, v)
        samples.append(value)
    return samples[0], samples[1]


def _se(samples: FloatArray, deterministic: bool) -> FloatArray:
    if deterministic or samples.shape[0] < 2:
        return np.zeros(samples.shape[1:])
    return samples.std(axis=0, ddof=1) / math.sqrt(samples.shape[0])


def hbar(
    spec: ProblemSpec, base: PathEnsemble, variational: VariationalEnsemble
) -> DirectionalRate:
    """h̄(v, t_i) = E[g_xᵀ y + g_uᵀ v] at the nodes.

    For Phi(x) = x in one dimension this is E[b_x y + b_u v].
    """
    values = _direction_values(base, variational.direction)
    right, left = hbar_samples(spec, base, variational.y[:, None], values[None])
    right, left = right[:, 0], left[:, 0]
    return DirectionalRate(
        grid=base.grid,
        right=right.mean(axis=0),
        left=left.mean(axis=0),
        right_se=_se(right, base.deterministic),
        left_se=_se(left, base.deterministic),
        scheme=base.scheme,
    )


def hbar_integral(rate: RateCurve, ttr: TerminalTimeResult) -> float:
    """∫_0^tau h̄ dt with the scheme's quadrature."""
    return float(integrate_to_tau(rate.right[:-1], rate.left[1:], ttr, rate.scheme))


# ============================================================================
# Terminal-time derivative
# ============================================================================


def require_rate_hypotheses(ttr: TerminalTimeResult) -> None:
    """Raise when h(tau) vanishes or jumps at tau in cases I and II."""
    if not ttr.needs_rate_hypotheses:
        return
    if ttr.degenerate_h:
        raise DegenerateRateError(
            DiagnosticMessages.degenerate_rate(
                ttr.tau, ttr.h_at_tau, ttr.degeneracy_threshold
            )
        )
    if ttr.h_discontinuous:
        raise DiscontinuityError(
            DiagnosticMessages.discontinuous_rate(
                ttr.tau, ttr.jump_statistic, ttr.jump_threshold
            )
        )


def tau_derivative(
    spec: ProblemSpec,
    ttr: TerminalTimeResult,
    hbar_curve: RateCurve,
    h_at_tau: float | None = None,
) -> TauDerivativeResult:
    """Derivative of tau in the direction behind ``hbar_curve``.

    Case I: ∫_0^tau h̄ dt / h(tau). Case II: the same value and 0 as
    candidates. Case III: exactly 0.

    Raises:
        DegenerateRateError: h(tau) is below the degeneracy threshold
        DiscontinuityError: h jumps at tau
    """
    ttr.grid.require_same(hbar_curve.grid)
    h = ttr.h_at_tau if h_at_tau is None else h_at_tau
    if ttr.case is Case.III:
        return TauDerivativeResult(Case.III, 0.0, 0.0, h)
    require_rate_hypotheses(ttr)
    integral = hbar_integral(hbar_curve, ttr)
    value = integral / h
    logger.info("tau derivative (case %s): %.6g", ttr.case.value, value)
    if ttr.case is Case.II:
        return TauDerivativeResult(Case.II, value, integral, h, candidates=(value, 0.0))
    return TauDerivativeResult(Case.I, value, integral, h)


def tau_derivative_fd(
    spec: ProblemSpec,
    base: PathEnsemble,
    direction: ControlPath,
    rho_list: Sequence[float],
    case_tol: float | None = None,
) -> QuotientTable:
    """Quotients (tau - tau_rho)/rho for signed rho under common random numbers.

    Raises:
        BoxViolationError: u + rho*v leaves the control box
    """
    tau = terminal_time(spec, base, case_tol)[2].tau
    rows = []
    for rho in rho_list:
        perturbed = base.control.perturbed(direction, rho, spec.box)
        moved = resimulate_with_control(base, spec, perturbed)
        tau_rho = terminal_time(spec, moved, case_tol)[2].tau
        rows.append(QuotientRow(float(rho), tau_rho, (tau - tau_rho) / rho))
    return QuotientTable(tau, rows)


# ============================================================================
# Cost functional and its derivative
# ============================================================================


def _cell_arrays(
    spec: ProblemSpec, base: PathEnsemble
) -> tuple[FloatArray, FloatArray, FloatArray]:
    """Cell start states, cell end states and cell controls, each (M*N, ·)."""
    count, dim = base.path_count, spec.state_dim
    start = base.states[:, :-1].reshape(-1, dim)
    end = base.states[:, 1:].reshape(-1, dim)
    u = cell_controls(base.control, count)
    return start, end, u.reshape(-1, spec.control_dim)


def cost_samples(
    spec: ProblemSpec, base: PathEnsemble, ttr: TerminalTimeResult
) -> FloatArray:
    """Per-path Psi(X(tau)) + ∫_0^tau f dt."""
    count, steps = base.path_count, base.grid.steps
    psi = spec.psi(base.states.reshape(-1, spec.state_dim)).reshape(count, steps + 1)
    start, end, u = _cell_arrays(spec, base)
    running = integrate_to_tau(
        spec.f(start, u).reshape(count, steps),
        spec.f(end, u).reshape(count, steps),
        ttr,
        base.scheme,
    )
    return interpolate_at_tau(psi, ttr) + running


def cost_functional(
    spec: ProblemSpec, base: PathEnsemble, ttr: TerminalTimeResult
) -> CostEstimate:
    """J = E[Psi(X(tau))] + ∫_0^tau E f dt with its standard error."""
    samples = cost_samples(spec, base, ttr)
    se = float(_se(samples, base.deterministic))
    return CostEstimate(float(samples.mean()), se)


def penalty_coefficients(
    spec: ProblemSpec, base: PathEnsemble, ttr: TerminalTimeResult
) -> PenaltyCoefficients:
    """Psi-tilde and E f at tau, evaluated at X(tau) with the control of tau's cell."""
    x_tau = cell_states(spec, base, ttr.cell, ttr.fraction)
    u = np.repeat(base.control.values[ttr.cell][None, :], base.path_count, axis=0)
    psi_tilde = generator(
        spec.psi_x(x_tau), spec.psi_xx(x_tau), spec.b(x_tau, u), spec.sigma(x_tau, u)
    )
    return PenaltyCoefficients(
        psi_tilde=float(psi_tilde.mean()),
        f_at_tau=float(spec.f(x_tau, u).mean()),
        h_at_tau=ttr.h_at_tau,
    )


def _cost_variation(
    spec: ProblemSpec,
    base: PathEnsemble,
    direction: ControlPath,
    ttr: TerminalTimeResult,
    penalties: bool,
) -> CostVariationResult:
    base.grid.require_same(ttr.grid)
    values = _direction_values(base, direction)
    count, steps = base.path_count, base.grid.steps
    y = propagate_variations(spec, base, values[None])[:, 0]

    psi_x = spec.psi_x(base.states.reshape(-1, spec.state_dim)).reshape(y.shape)
    terminal = interpolate_at_tau(np.einsum("nim,nim->ni", psi_x, y), ttr)

    start, end, u = _cell_arrays(spec, base)
    v = np.broadcast_to(values, (count, *values.shape)).reshape(-1, spec.control_dim)
    y_start = y[:, :-1].reshape(-1, spec.state_dim)
    y_end = y[:, 1:].reshape(-1, spec.state_dim)
    f_u_v_start = np.einsum("nk,nk->n", spec.f_u(start, u), v)
    f_u_v_end = np.einsum("nk,nk->n", spec.f_u(end, u), v)
    running = integrate_to_tau(
        (np.einsum("nm,nm->n", spec.f_x(start, u), y_start) + f_u_v_start).reshape(
            count, steps
        ),
        (np.einsum("nm,nm->n", spec.f_x(end, u), y_end) + f_u_v_end).reshape(
            count, steps
        ),
        ttr,
        base.scheme,
    )

    def assemble(
        kappa_psi: float, kappa_f: float, integral: FloatArray, branch: str
    ) -> CostVariationResult:
        totals = -(kappa_psi + kappa_f) * integral + terminal + running
        mean_integral = float(integral.mean())
        return CostVariationResult(
            case=ttr.case,
            penalty_psi=-kappa_psi * mean_integral,
            penalty_f=-kappa_f * mean_integral,
            terminal=float(terminal.mean()),
            running=float(running.mean()),
            se=float(_se(totals, base.deterministic)),
            branch=branch,
        )

    zero = np.zeros(count)
    unpenalized = assemble(0.0, 0.0, zero, "unpenalized")
    if not penalties or ttr.case is Case.III:
        return unpenalized

    require_rate_hypotheses(ttr)
    right, left = hbar_samples(spec, base, y[:, None], values[None])
    integral = integrate_to_tau(right[:, 0, :-1], left[:, 0, 1:], ttr, base.scheme)
    coefficients = penalty_coefficients(spec, base, ttr)
    penalized = assemble(
        coefficients.kappa_psi, coefficients.kappa_f, integral, "penalized"
    )
    if ttr.case is Case.II:
        return CostVariationResult(
            case=penalized.case,
            penalty_psi=penalized.penalty_psi,
            penalty_f=penalized.penalty_f,
            terminal=penalized.terminal,
            running=penalized.running,
            se=penalized.se,
            branch=penalized.branch,
            alternative=unpenalized,
        )
    return penalized


def cost_directional_derivative(
    spec: ProblemSpec,
    base: PathEnsemble,
    direction: ControlPath,
    ttr: TerminalTimeResult,
) -> CostVariationResult:
    """Directional derivative of J including the two penalty terms.

    penalty_psi = -∫ Psi-tilde·h̄/h(tau), penalty_f = -∫ E f(tau)·h̄/h(tau),
    terminal = E[Psi_xᵀ y(tau)], running = ∫ E[f_xᵀ y + f_uᵀ v]. Penalties
    vanish in case III; case II attaches the unpenalized branch.

    Raises:
        DegenerateRateError: h(tau) is below the degeneracy threshold
        DiscontinuityError: h jumps at tau
    """
    result = _cost_variation(spec, base, direction, ttr, penalties=True)
    logger.info("cost derivative (case %s): %.6g", result.case.value, result.total)
    return result


def classical_directional_derivative(
    spec: ProblemSpec,
    base: PathEnsemble,
    direction: ControlPath,
    ttr: TerminalTimeResult,
) -> CostVariationResult:
    """Fixed-horizon derivative: the same computation with penalties off."""
    return _cost_variation(spec, base, direction, ttr, penalties=False)


def cost_derivative_fd(
    spec: ProblemSpec,
    base: PathEnsemble,
    direction: ControlPath,
    rho_list: Sequence[float],
    case_tol: float | None = None,
) -> QuotientTable:
    """Quotients (J(u + rho v) - J(u))/rho with tau recomputed per rho.

    Raises:
        BoxViolationError: u + rho*v leaves the control box
    """
    ttr = terminal_time(spec, base, case_tol)[2]
    cost = cost_functional(spec, base, ttr).value
    rows = []
    for rho in rho_list:
        perturbed = base.control.perturbed(direction, rho, spec.box)
        moved = resimulate_with_control(base, spec, perturbed)
        moved_ttr = terminal_time(spec, moved, case_tol)[2]
        moved_cost = cost_functional(spec, moved, moved_ttr).value
        rows.append(QuotientRow(float(rho), moved_cost, (moved_cost - cost) / rho))
    return QuotientTable(cost, rows)


def match_branches(
    variation: CostVariationResult, quotients: QuotientTable
) -> dict[str, str | None]:
    """Per rho side, the branch whose total is closest to the quotient limit.

    Only meaningful in case II, where ``variation`` carries an alternative.
    """
    candidates = [variation]
    if variation.alternative is not None:
        candidates.append(variation.alternative)
    matches: dict[str, str | None] = {}
    for sign, side in ((1, "positive"), (-1, "negative")):
        limit = quotients.limit(sign)
        if limit is None:
            matches[side] = None
            continue
        matches[side] = min(candidates, key=lambda c: abs(c.total - limit)).branch
    return matches


# ============================================================================
# Replicated comparison
# ============================================================================


@dataclass(frozen=True)
class ReplicatedComparison:
    """Analytic cost derivative against the quotient limit over independent seeds.

    ``se`` is the standard error of the per-seed differences, so it carries
    the Monte Carlo error of the estimated tau that a single ensemble's
    standard error leaves out.
    """

    analytic: float
    quotient: float
    se: float
    replicates: int

    @property
    def gap(self) -> float:
        return abs(self.quotient - self.analytic)

    def tolerance(self, rtol: float, sigmas: float = 3.0) -> float:
        return max(rtol * abs(self.analytic), sigmas * self.se)

    def agrees(self, rtol: float, sigmas: float = 3.0) -> bool:
        return self.gap <= self.tolerance(rtol, sigmas)

    def to_dict(self) -> dict[str, Any]:
        return {
            "analytic": self.analytic,
            "quotient": self.quotient,
            "se": self.se,
            "replicates": self.replicates,
        }


def replicated_cost_check(
    spec: ProblemSpec,
    control: ControlPath,
    direction: ControlPath,
    settings: MonteCarloSettings,
    rho_list: Sequence[float],
    replicates: int,
    case_tol: float | None = None,
) -> ReplicatedComparison:
    """Run cost_directional_derivative and cost_derivative_fd on ``replicates`` seeds.

    Replicate r simulates with seed ``settings.seed + r`` and both estimates
    share its increments.

    Raises:
        ConfigError: fewer than two replicates, or no positive rho
        BoxViolationError: u + rho*v leaves the control box
    """
    if replicates < 2:
        raise ConfigError(
            f"🚫 CONFIG ERROR: replicates = {replicates} < 2", key_path="replicates"
        )
    if not any(rho > 0 for rho in rho_list):
        raise ConfigError(
            "🚫 CONFIG ERROR: the replicated check needs a positive rho",
            key_path="rho_list",
        )
    analytic, quotient = [], []
    for replicate in range(replicates):
        run = dataclasses.replace(settings, seed=settings.seed + replicate)
        base = simulate_with_settings(spec, control, run)
        ttr = terminal_time(spec, base, case_tol)[2]
        analytic.append(cost_directional_derivative(spec, base, direction, ttr).total)
        table = cost_derivative_fd(spec, base, direction, rho_list, case_tol)
        quotient.append(float(table.limit(1)))  # type: ignore[arg-type]
    gaps = np.subtract(quotient, analytic)
    comparison = ReplicatedComparison(
        analytic=float(np.mean(analytic)),
        quotient=float(np.mean(quotient)),
        se=float(gaps.std(ddof=1) / math.sqrt(replicates)),
        replicates=replicates,
    )
    logger.info(
        "replicated cost check: analytic %.6g, quotient %.6g, se %.3g",
        comparison.analytic,
        comparison.quotient,
        comparison.se,
    )
    return comparison
