"""Backward adjoint equations on [0, tau], Hamiltonians and duality checks.

The first adjoint solves -dp = [b_xᵀp + Σσ_x^jᵀq^j - f_x]dt - q dW with
p(tau) = -Psi_x(X(tau)). The second adjoint uses g_x as source and a zero
terminal value; its Hamiltonian gradient gives the dual form of ∫h̄.

Backends:

- deterministic Euler: the exact discrete adjoint of the Euler scheme, so
  both duality identities hold to round-off
- deterministic RK4: backward RK4 with Hermite-interpolated states
- regression: least-squares backward induction on a quadratic basis
"""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .config import AdjointMode, Scheme
from .error_messages import DiagnosticMessages
from .errors import ConfigError, DegenerateIntervalError, IllConditionedError
from .forward import (
    PathEnsemble,
    TerminalTimeResult,
    cell_controls,
    cell_states,
    generator,
    integrate_to_tau,
)
from .grid import TruncatedGrid
from .problem import FloatArray, ProblemSpec
from .variation import VariationalEnsemble, hbar_samples, rate_derivatives


logger = logging.getLogger(__name__)

# Paths required per basis function before a regression step is trusted.
PATHS_PER_BASIS = 10

FIRST = "first"
SECOND = "second"


@dataclass(frozen=True, eq=False)
class AdjointPath:
    """Adjoint values on the truncated grid.

    Attributes:
        p: (M, K+1, m) values at t_0..t_{K-1}, tau
        p_hat: (M, K, m) value entering the Hamiltonian on cell i
        q: (M, K, m, d) martingale integrand per cell (zero without noise)
        coefficients: regression coefficients per backward step, (basis, targets)
    """

    truncated: TruncatedGrid
    mode: AdjointMode
    kind: str
    p: FloatArray
    p_hat: FloatArray
    q: FloatArray
    coefficients: list[FloatArray] = field(default_factory=list)

    @property
    def cells(self) -> int:
        return self.truncated.cells

    def rows(self) -> list[list[float]]:
        """CSV rows ``t, p_1..p_m, q_11..q_md`` for the first path."""
        rows = []
        for index, t in enumerate(self.truncated.nodes):
            q = self.q[0, min(index, self.cells - 1)]
            rows.append([float(t), *self.p[0, index].tolist(), *q.ravel().tolist()])
        return rows

    def coefficient_rows(self) -> list[list[Any]]:
        """CSV rows ``step, target, coef_0..coef_B`` (regression mode)."""
        rows: list[list[Any]] = []
        for step, coefficients in enumerate(self.coefficients):
            for target, column in enumerate(coefficients.T):
                rows.append([step, target, *column.tolist()])
        return rows


@dataclass(frozen=True)
class HamiltonianEval:
    """H and H_u per path and cell: value (M, K), gradient (M, K, k)."""

    value: FloatArray
    gradient: FloatArray


@dataclass(frozen=True)
class DualityResult:
    lhs: float
    rhs: float
    defect: float
    se: float

    def to_dict(self) -> dict[str, float]:
        return {"lhs": self.lhs, "rhs": self.rhs, "defect": self.defect, "se": self.se}


# ============================================================================
# Hamiltonians
# ============================================================================


def hamiltonian(
    spec: ProblemSpec, x: FloatArray, u: FloatArray, p: FloatArray, q: FloatArray
) -> FloatArray:
    """H = bᵀp + Σ_j σ^jᵀq^j - f, batched."""
    value = np.einsum("nm,nm->n", spec.b(x, u), p)
    value += np.einsum("nmd,nmd->n", spec.sigma(x, u), q)
    return value - spec.f(x, u)


def hamiltonian_u(
    spec: ProblemSpec, x: FloatArray, u: FloatArray, p: FloatArray, q: FloatArray
) -> FloatArray:
    """H_u = b_uᵀp + Σ_j σ_u^jᵀq^j - f_u, batched to (n, k)."""
    value = np.einsum("nak,na->nk", spec.b_u(x, u), p)
    value += np.einsum("njak,naj->nk", spec.sigma_u(x, u), q)
    return value - spec.f_u(x, u)


def second_hamiltonian_u(
    spec: ProblemSpec, x: FloatArray, u: FloatArray, p: FloatArray, q: FloatArray
) -> FloatArray:
    """b_uᵀp₀ + Σ_j σ_u^jᵀq₀^j - g_u."""
    value = np.einsum("nak,na->nk", spec.b_u(x, u), p)
    value += np.einsum("njak,naj->nk", spec.sigma_u(x, u), q)
    return value - rate_derivatives(spec, x, u)[1]


def _second_hamiltonian(
    spec: ProblemSpec, x: FloatArray, u: FloatArray, p: FloatArray, q: FloatArray
) -> FloatArray:
    sigma = spec.sigma(x, u)
    value = np.einsum("nm,nm->n", spec.b(x, u), p)
    value += np.einsum("nmd,nmd->n", sigma, q)
    return value - generator(spec.phi_x(x), spec.phi_xx(x), spec.b(x, u), sigma)


def _cell_inputs(
    spec: ProblemSpec, base: PathEnsemble, cells: int
) -> tuple[FloatArray, FloatArray]:
    count = base.path_count
    x = base.states[:, :cells].reshape(-1, spec.state_dim)
    u = cell_controls(base.control, count, cells)
    return x, u.reshape(-1, spec.control_dim)


def hamiltonian_gradient_curve(
    spec: ProblemSpec, base: PathEnsemble, adjoint: AdjointPath
) -> HamiltonianEval:
    """H (or the second Hamiltonian) and its u-gradient on every cell before tau."""
    count, cells = base.path_count, adjoint.cells
    x, u = _cell_inputs(spec, base, cells)
    p = adjoint.p_hat.reshape(-1, spec.state_dim)
    q = adjoint.q.reshape(-1, spec.state_dim, spec.noise_dim)
    if adjoint.kind == SECOND:
        value = _second_hamiltonian(spec, x, u, p, q)
        gradient = second_hamiltonian_u(spec, x, u, p, q)
    else:
        value = hamiltonian(spec, x, u, p, q)
        gradient = hamiltonian_u(spec, x, u, p, q)
    return HamiltonianEval(
        value.reshape(count, cells), gradient.reshape(count, cells, spec.control_dim)
    )


# ============================================================================
# Backward solvers
# ============================================================================


SourceFn = Callable[[FloatArray, FloatArray], FloatArray]


def quadratic_basis(x: FloatArray) -> FloatArray:
    """Columns 1, x_a, x_a*x_b (a <= b)."""
    dim = x.shape[1]
    columns = [np.ones(x.shape[0]), *(x[:, a] for a in range(dim))]
    pairs = itertools.combinations_with_replacement(range(dim), 2)
    columns += [x[:, a] * x[:, b] for a, b in pairs]
    return np.column_stack(columns)


def basis_size(state_dim: int) -> int:
    return 1 + state_dim + state_dim * (state_dim + 1) // 2


def _resolve_mode(base: PathEnsemble, mode: AdjointMode | str | None) -> AdjointMode:
    mode = AdjointMode(mode) if mode is not None else AdjointMode.AUTO
    if mode is AdjointMode.AUTO:
        if base.deterministic:
            return AdjointMode.DETERMINISTIC
        return AdjointMode.REGRESSION
    if mode is AdjointMode.DETERMINISTIC and not base.deterministic:
        raise ConfigError(
            "🚫 CONFIG ERROR: deterministic adjoint needs a noise-free problem; "
            "use adjoint_mode 'regression' or 'auto'",
            key_path="verification.adjoint_mode",
        )
    return mode


def _transpose_apply(matrix: FloatArray, p: FloatArray) -> FloatArray:
    return np.einsum("nba,nb->na", matrix, p)


def _euler_backward(
    spec: ProblemSpec,
    base: PathEnsemble,
    truncated: TruncatedGrid,
    source: SourceFn,
    terminal: FloatArray,
) -> tuple[FloatArray, FloatArray]:
    cells = truncated.cells
    p = np.empty((base.path_count, cells + 1, spec.state_dim))
    p[:, cells] = terminal
    for i in reversed(range(cells)):
        x = base.states[:, i]
        u = np.repeat(base.control.values[i][None, :], base.path_count, axis=0)
        nxt = p[:, i + 1]
        step = _transpose_apply(spec.b_x(x, u), nxt) - source(x, u)
        p[:, i] = nxt + truncated.widths[i] * step
    return p, p[:, 1:].copy()


def _rk4_backward(
    spec: ProblemSpec,
    base: PathEnsemble,
    truncated: TruncatedGrid,
    source: SourceFn,
    terminal: FloatArray,
) -> tuple[FloatArray, FloatArray]:
    cells = truncated.cells
    p = np.empty((base.path_count, cells + 1, spec.state_dim))
    p[:, cells] = terminal
    for i in reversed(range(cells)):
        width = truncated.widths[i]
        span = width / truncated.grid.dt
        u = np.repeat(base.control.values[i][None, :], base.path_count, axis=0)

        def rhs(
            s: float, value: FloatArray, i: int = i, u: FloatArray = u
        ) -> FloatArray:
            x = cell_states(spec, base, i, s)
            return -_transpose_apply(spec.b_x(x, u), value) + source(x, u)

        nxt = p[:, i + 1]
        k1 = rhs(span, nxt)
        k2 = rhs(0.5 * span, nxt - 0.5 * width * k1)
        k3 = rhs(0.5 * span, nxt - 0.5 * width * k2)
        k4 = rhs(0.0, nxt - width * k3)
        p[:, i] = nxt - width / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return p, p[:, :cells].copy()


def _regression_backward(
    spec: ProblemSpec,
    base: PathEnsemble,
    truncated: TruncatedGrid,
    source: SourceFn,
    terminal: FloatArray,
) -> tuple[FloatArray, FloatArray, FloatArray, list[FloatArray]]:
    count, dim, noise_dim = base.path_count, spec.state_dim, spec.noise_dim
    size = basis_size(dim)
    if count < PATHS_PER_BASIS * size:
        raise IllConditionedError(DiagnosticMessages.ill_conditioned(count, size))
    increments = base.require_increments()
    cells, dt = truncated.cells, truncated.grid.dt
    p = np.empty((count, cells + 1, dim))
    p_hat = np.empty((count, cells, dim))
    q = np.empty((count, cells, dim, noise_dim))
    p[:, cells] = terminal
    coefficients: list[FloatArray] = []
    for i in reversed(range(cells)):
        x = base.states[:, i]
        u = np.repeat(base.control.values[i][None, :], count, axis=0)
        nxt = p[:, i + 1]
        design = quadratic_basis(x)
        targets = np.concatenate(
            [nxt, np.einsum("na,nj->naj", nxt, increments[:, i]).reshape(count, -1)],
            axis=1,
        )
        fitted, *_ = np.linalg.lstsq(design, targets, rcond=None)
        coefficients.append(fitted)
        projection = design @ fitted
        p_hat[:, i] = projection[:, :dim]
        # X(tau) carries fraction*ΔW on the partial last cell
        width = truncated.widths[i] if truncated.widths[i] > 0.0 else dt
        q[:, i] = projection[:, dim:].reshape(count, dim, noise_dim) / width
        drift_term = _transpose_apply(spec.b_x(x, u), p_hat[:, i])
        drift_term += np.einsum("njba,nbj->na", spec.sigma_x(x, u), q[:, i])
        p[:, i] = p_hat[:, i] + truncated.widths[i] * (drift_term - source(x, u))
    coefficients.reverse()
    return p, p_hat, q, coefficients


def _solve(
    spec: ProblemSpec,
    base: PathEnsemble,
    ttr: TerminalTimeResult,
    mode: AdjointMode | str | None,
    kind: str,
) -> AdjointPath:
    base.grid.require_same(ttr.grid)
    if ttr.tau <= 0.0:
        raise DegenerateIntervalError(
            "🚫 DEGENERATE INTERVAL: tau = 0, "
            "the backward interval [0, tau] is empty",
            key_path="tau",
        )
    resolved = _resolve_mode(base, mode)
    truncated = ttr.truncated
    count = base.path_count
    if kind == SECOND:
        terminal = np.zeros((count, spec.state_dim))

        def source(x: FloatArray, u: FloatArray) -> FloatArray:
            return rate_derivatives(spec, x, u)[0]

    else:
        terminal = -spec.psi_x(cell_states(spec, base, ttr.cell, ttr.fraction))
        source = spec.f_x

    coefficients: list[FloatArray] = []
    if resolved is AdjointMode.REGRESSION:
        p, p_hat, q, coefficients = _regression_backward(
            spec, base, truncated, source, terminal
        )
    else:
        backward = _rk4_backward if base.scheme is Scheme.RK4 else _euler_backward
        p, p_hat = backward(spec, base, truncated, source, terminal)
        q = np.zeros((count, truncated.cells, spec.state_dim, spec.noise_dim))
    logger.debug(
        "%s adjoint (%s): K=%d p(0)=%s",
        kind,
        resolved.value,
        truncated.cells,
        p[:, 0].mean(axis=0),
    )
    return AdjointPath(truncated, resolved, kind, p, p_hat, q, coefficients)


def solve_adjoint(
    spec: ProblemSpec,
    base: PathEnsemble,
    ttr: TerminalTimeResult,
    mode: AdjointMode | str | None = None,
) -> AdjointPath:
    """First-order adjoint (p, q) on [0, tau].

    Args:
        mode: None or AUTO picks deterministic for noise-free ensembles and
            regression otherwise

    Raises:
        DegenerateIntervalError: tau = 0
        IllConditionedError: regression with M < 10 * basis size
        ConfigError: deterministic mode requested for a problem with noise
    """
    return _solve(spec, base, ttr, mode, FIRST)


def solve_appendix_adjoint(
    spec: ProblemSpec,
    base: PathEnsemble,
    ttr: TerminalTimeResult,
    mode: AdjointMode | str | None = None,
) -> AdjointPath:
    """Second adjoint (p₀, q₀): source g_x, p₀(tau) = 0."""
    return _solve(spec, base, ttr, mode, SECOND)


# ============================================================================
# Duality checks
# ============================================================================


def _cell_end_values(
    spec: ProblemSpec, base: PathEnsemble, ttr: TerminalTimeResult, y: FloatArray
) -> tuple[FloatArray, FloatArray]:
    """States and variations at the right end of each truncated cell, (M, K, m)."""
    cells = ttr.truncated.cells
    x_end = base.states[:, 1 : cells + 1].copy()
    y_end = y[:, 1 : cells + 1].copy()
    x_end[:, -1] = cell_states(spec, base, ttr.cell, ttr.fraction)
    y_end[:, -1] = y[:, ttr.cell] + ttr.fraction * (y[:, ttr.cell + 1] - y[:, ttr.cell])
    return x_end, y_end


def _truncated_quadrature(
    start: FloatArray, end: FloatArray, truncated: TruncatedGrid, scheme: Scheme
) -> FloatArray:
    widths = truncated.widths
    if scheme is Scheme.RK4:
        return 0.5 * ((start + end) * widths).sum(axis=-1)
    return (start * widths).sum(axis=-1)


def _integrand(
    spec: ProblemSpec,
    x: FloatArray,
    u: FloatArray,
    p: FloatArray,
    q: FloatArray,
    y: FloatArray,
    v: FloatArray,
) -> FloatArray:
    """p·b_u v + Σ_j q^j·σ_u^j v + f_x·y, batched."""
    value = np.einsum("na,nak,nk->n", p, spec.b_u(x, u), v)
    value += np.einsum("naj,njak,nk->n", q, spec.sigma_u(x, u), v)
    return value + np.einsum("na,na->n", spec.f_x(x, u), y)


def _summarize(lhs: FloatArray, rhs: FloatArray, deterministic: bool) -> DualityResult:
    difference = lhs - rhs
    se = 0.0
    if not deterministic and difference.size > 1:
        se = float(difference.std(ddof=1) / math.sqrt(difference.size))
    lhs_mean, rhs_mean = float(lhs.mean()), float(rhs.mean())
    return DualityResult(lhs_mean, rhs_mean, abs(lhs_mean - rhs_mean), se)


def _flat(array: FloatArray, *trailing: int) -> FloatArray:
    return np.ascontiguousarray(array).reshape(-1, *trailing)


def duality_check(
    spec: ProblemSpec,
    base: PathEnsemble,
    ttr: TerminalTimeResult,
    adjoint: AdjointPath,
    variational: VariationalEnsemble,
) -> DualityResult:
    """Compare E[-Psi_x(X(tau))ᵀ y(tau)] with its adjoint representation.

    The right side is ∫_0^tau E[pᵀb_u v + Σqʲᵀσ_uʲ v + f_xᵀy] dt.
    """
    count, cells = base.path_count, adjoint.cells
    dim, noise_dim, k = spec.state_dim, spec.noise_dim, spec.control_dim
    y = variational.y
    x_end, y_end = _cell_end_values(spec, base, ttr, y)
    lhs = -np.einsum("na,na->n", spec.psi_x(x_end[:, -1]), y_end[:, -1])

    x, u = _cell_inputs(spec, base, cells)
    v = _flat(cell_controls(variational.direction, count, cells), k)
    q = _flat(adjoint.q, dim, noise_dim)
    start = _integrand(
        spec, x, u, _flat(adjoint.p_hat, dim), q, _flat(y[:, :cells], dim), v
    ).reshape(count, cells)
    end = start
    if base.scheme is Scheme.RK4:
        end = _integrand(
            spec,
            _flat(x_end, dim),
            u,
            _flat(adjoint.p[:, 1:], dim),
            q,
            _flat(y_end, dim),
            v,
        ).reshape(count, cells)
    rhs = _truncated_quadrature(start, end, ttr.truncated, base.scheme)
    return _summarize(lhs, rhs, base.deterministic)


def max2_dual_check(
    spec: ProblemSpec,
    base: PathEnsemble,
    ttr: TerminalTimeResult,
    second: AdjointPath,
    variational: VariationalEnsemble,
) -> DualityResult:
    """Compare ∫_0^tau h̄ dt with ∫_0^tau E[-𝓗_u v] dt."""
    count, cells = base.path_count, second.cells
    dim, noise_dim, k = spec.state_dim, spec.noise_dim, spec.control_dim
    values = variational.direction.values
    right, left = hbar_samples(spec, base, variational.y[:, None], values[None])
    lhs = integrate_to_tau(right[:, 0, :-1], left[:, 0, 1:], ttr, base.scheme)

    x, u = _cell_inputs(spec, base, cells)
    v = cell_controls(variational.direction, count, cells)
    q = _flat(second.q, dim, noise_dim)
    gradient = second_hamiltonian_u(spec, x, u, _flat(second.p_hat, dim), q)
    start = -np.einsum("nik,nik->ni", gradient.reshape(count, cells, k), v)
    end = start
    if base.scheme is Scheme.RK4:
        x_end = _cell_end_values(spec, base, ttr, variational.y)[0]
        gradient_end = second_hamiltonian_u(
            spec, _flat(x_end, dim), u, _flat(second.p[:, 1:], dim), q
        )
        end = -np.einsum("nik,nik->ni", gradient_end.reshape(count, cells, k), v)
    rhs = _truncated_quadrature(start, end, ttr.truncated, base.scheme)
    return _summarize(lhs, rhs, base.deterministic)
