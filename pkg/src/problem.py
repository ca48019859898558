"""Optimal-control problem data and its differentiability contract.

Coefficients are batched: states ``x`` have shape (n, m) and controls ``u``
shape (n, k). Returned shapes:

==============  ==================
b               (n, m)
sigma           (n, m, d)
f, Psi, Phi     (n,)
b_x             (n, m, m)
b_u             (n, m, k)
sigma_x         (n, d, m, m)   [j, i, a] = d sigma_ij / d x_a
sigma_u         (n, d, m, k)
f_x, Psi_x      (n, m)
f_u             (n, k)
Psi_xx, Phi_xx  (n, m, m)
Phi_xxx         (n, m, m, m)
==============  ==================

A problem without diffusion is noise-free and runs in deterministic mode.
"""

from __future__ import annotations

import dataclasses
import itertools
import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .error_messages import DiagnosticMessages
from .errors import ConfigError, ContractError
from .grid import ControlBox, ControlPath, TimeGrid


logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
StateControlFn = Callable[[FloatArray, FloatArray], FloatArray]
StateFn = Callable[[FloatArray], FloatArray]

EPS = float(np.finfo(float).eps)
FIRST_ORDER_STEP = EPS ** (1.0 / 3.0)
SECOND_ORDER_STEP = EPS**0.25
THIRD_ORDER_STEP = EPS**0.2

DERIVATIVE_FIELDS = (
    "drift_x",
    "drift_u",
    "diffusion_x",
    "diffusion_u",
    "running_cost_x",
    "running_cost_u",
    "terminal_cost_x",
    "terminal_cost_xx",
    "constraint_x",
    "constraint_xx",
    "constraint_xxx",
)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Coefficients, derivatives, horizon, threshold, box and initial state."""

    name: str
    state_dim: int
    control_dim: int
    noise_dim: int
    drift: StateControlFn
    running_cost: StateControlFn
    terminal_cost: StateFn
    constraint: StateFn
    horizon: float
    alpha: float
    x0: FloatArray
    box: ControlBox
    diffusion: StateControlFn | None = None
    drift_x: StateControlFn | None = None
    drift_u: StateControlFn | None = None
    diffusion_x: StateControlFn | None = None
    diffusion_u: StateControlFn | None = None
    running_cost_x: StateControlFn | None = None
    running_cost_u: StateControlFn | None = None
    terminal_cost_x: StateFn | None = None
    terminal_cost_xx: StateFn | None = None
    constraint_x: StateFn | None = None
    constraint_xx: StateFn | None = None
    constraint_xxx: StateFn | None = None
    reference_control: Callable[[float], Any] | None = None
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.shape != (self.state_dim,):
            raise ConfigError(
                f"🚫 CONFIG ERROR: x0 has shape {x0.shape}, "
                f"expected ({self.state_dim},)",
                key_path="x0",
            )
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        if self.box.dim != self.control_dim:
            raise ConfigError(
                f"🚫 CONFIG ERROR: box has {self.box.dim} coordinates, "
                f"control_dim is {self.control_dim}",
                key_path="box",
            )
        if not self.horizon > 0:
            raise ConfigError(
                f"🚫 CONFIG ERROR: horizon {self.horizon!r} must be positive",
                key_path="horizon",
            )
        phi_x0 = float(self.constraint(x0[None, :])[0])
        if not self.alpha > phi_x0:
            raise ConfigError(
                DiagnosticMessages.alpha_not_above_start(self.alpha, phi_x0),
                key_path="alpha",
            )

    @property
    def noise_free(self) -> bool:
        return self.diffusion is None

    @property
    def phi_x0(self) -> float:
        return float(self.constraint(self.x0[None, :])[0])

    def missing_derivatives(self) -> list[str]:
        missing = []
        for name in DERIVATIVE_FIELDS:
            if name.startswith("diffusion") and self.noise_free:
                continue
            if getattr(self, name) is None:
                missing.append(name)
        return missing

    def _need(self, name: str) -> Any:
        fn = getattr(self, name)
        if fn is None:
            raise ContractError(
                f"🚫 CONTRACT ERROR: problem '{self.name}' has no {name}; "
                "wrap it with finite_difference_derivatives()"
            )
        return fn

    # Coefficients (short mathematical names) ---------------------------------

    def b(self, x: FloatArray, u: FloatArray) -> FloatArray:
        return np.asarray(self.drift(x, u), dtype=float)

    def sigma(self, x: FloatArray, u: FloatArray) -> FloatArray:
        if self.diffusion is None:
            return np.zeros((x.shape[0], self.state_dim, self.noise_dim))
        return np.asarray(self.diffusion(x, u), dtype=float)

    def f(self, x: FloatArray, u: FloatArray) -> FloatArray:
        return np.asarray(self.running_cost(x, u), dtype=float)

    def psi(self, x: FloatArray) -> FloatArray:
        return np.asarray(self.terminal_cost(x), dtype=float)

    def phi(self, x: FloatArray) -> FloatArray:
        return np.asarray(self.constraint(x), dtype=float)

    def b_x(self, x: FloatArray, u: FloatArray) -> FloatArray:
        return np.asarray(self._need("drift_x")(x, u), dtype=float)

    def b_u(self, x: FloatArray, u: FloatArray) -> FloatArray:
        return np.asarray(self._need("drift_u")(x, u), dtype=float)

    def sigma_x(self, x: FloatArray, u: FloatArray) -> FloatArray:
        if self.diffusion is None:
            shape = (x.shape[0], self.noise_dim, self.state_dim, self.state_dim)
            return np.zeros(shape)
        return np.asarray(self._need("diffusion_x")(x, u), dtype=float)

    def sigma_u(self, x: FloatArray, u: FloatArray) -> FloatArray:
        if self.diffusion is None:
            return np.zeros(
                (x.shape[0], self.noise_dim, self.state_dim, self.control_dim)
            )
        return np.asarray(self._need("diffusion_u")(x, u), dtype=float)

    def f_x(self, x: FloatArray, u: FloatArray) -> FloatArray:
        return np.asarray(self._need("running_cost_x")(x, u), dtype=float)

    def f_u(self, x: FloatArray, u: FloatArray) -> FloatArray:
        return np.asarray(self._need("running_cost_u")(x, u), dtype=float)

    def psi_x(self, x: FloatArray) -> FloatArray:
        return np.asarray(self._need("terminal_cost_x")(x), dtype=float)

    def psi_xx(self, x: FloatArray) -> FloatArray:
        return np.asarray(self._need("terminal_cost_xx")(x), dtype=float)

    def phi_x(self, x: FloatArray) -> FloatArray:
        return np.asarray(self._need("constraint_x")(x), dtype=float)

    def phi_xx(self, x: FloatArray) -> FloatArray:
        return np.asarray(self._need("constraint_xx")(x), dtype=float)

    def phi_xxx(self, x: FloatArray) -> FloatArray:
        return np.asarray(self._need("constraint_xxx")(x), dtype=float)

    # Controls -----------------------------------------------------------------

    def reference(self, grid: TimeGrid) -> ControlPath:
        """The stored candidate control sampled on ``grid``."""
        if self.reference_control is None:
            raise ConfigError(
                f"🚫 CONFIG ERROR: problem '{self.name}' has no reference control",
                key_path="control",
            )
        return ControlPath.from_function(grid, self.reference_control, self.box)

    def time_grid(self, steps: int) -> TimeGrid:
        return TimeGrid(self.horizon, steps)


# ============================================================================
# Finite differences
# ============================================================================


def _steps(x: FloatArray, base: float) -> FloatArray:
    return base * np.maximum(1.0, np.abs(x))


def _central_partial(
    fn: Callable[[FloatArray], FloatArray],
    x: FloatArray,
    axes: tuple[int, ...],
    h: FloatArray,
) -> FloatArray:
    """Mixed central difference of ``fn`` along ``axes`` (repeats allowed).

    Sums over all sign patterns s in {-1, +1}^r of prod(s)*fn(x + sum s_j h_j e_j)
    and divides by prod(2 h_j); h has the shape of x.
    """
    total: FloatArray | None = None
    for signs in itertools.product((1.0, -1.0), repeat=len(axes)):
        shifted = x.copy()
        for sign, axis in zip(signs, axes, strict=True):
            shifted[:, axis] += sign * h[:, axis]
        value = np.asarray(fn(shifted), dtype=float) * float(np.prod(signs))
        total = value if total is None else total + value
    assert total is not None
    denominator = np.ones(x.shape[0])
    for axis in axes:
        denominator = denominator * 2.0 * h[:, axis]
    return total / denominator.reshape((-1,) + (1,) * (total.ndim - 1))


def _jacobian_x(fn: StateControlFn, dim: int) -> StateControlFn:
    """d fn / dx stacked on a trailing axis of size ``dim``."""

    def jac(x: FloatArray, u: FloatArray) -> FloatArray:
        h = _steps(x, FIRST_ORDER_STEP)
        columns = [_central_partial(lambda z: fn(z, u), x, (a,), h) for a in range(dim)]
        return np.stack(columns, axis=-1)

    return jac


def _jacobian_u(fn: StateControlFn, dim: int) -> StateControlFn:
    def jac(x: FloatArray, u: FloatArray) -> FloatArray:
        h = _steps(u, FIRST_ORDER_STEP)
        columns = [_central_partial(lambda v: fn(x, v), u, (c,), h) for c in range(dim)]
        return np.stack(columns, axis=-1)

    return jac


def _state_derivative(fn: StateFn, dim: int, order: int) -> StateFn:
    base = {1: FIRST_ORDER_STEP, 2: SECOND_ORDER_STEP, 3: THIRD_ORDER_STEP}[order]

    def derivative(x: FloatArray) -> FloatArray:
        h = _steps(x, base)
        out = np.empty((x.shape[0],) + (dim,) * order)
        for axes in itertools.product(range(dim), repeat=order):
            out[(slice(None), *axes)] = _central_partial(fn, x, axes, h)
        return out

    return derivative


def _diffusion_columns_first(fn: StateControlFn) -> StateControlFn:
    # sigma is (n, m, d); derivatives are indexed by noise column first
    return lambda x, u: np.swapaxes(np.asarray(fn(x, u), dtype=float), 1, 2)


def finite_difference_derivatives(
    spec: ProblemSpec, only_missing: bool = False
) -> ProblemSpec:
    """Return ``spec`` with central-difference derivative fields.

    First derivatives use h = cbrt(eps)*max(1, |x|) per coordinate; Psi_xx and
    Phi_xx use nested central differences with h = eps^(1/4)*max(1, |x|), and
    Phi_xxx with h = eps^(1/5)*max(1, |x|).

    Args:
        spec: Problem whose coefficient functions are evaluable near the
            requested points
        only_missing: Keep derivatives that are already supplied

    Returns:
        A new ProblemSpec
    """
    m, k = spec.state_dim, spec.control_dim
    derived: dict[str, Any] = {
        "drift_x": _jacobian_x(spec.drift, m),
        "drift_u": _jacobian_u(spec.drift, k),
        "running_cost_x": _jacobian_x(spec.running_cost, m),
        "running_cost_u": _jacobian_u(spec.running_cost, k),
        "terminal_cost_x": _state_derivative(spec.terminal_cost, m, 1),
        "terminal_cost_xx": _state_derivative(spec.terminal_cost, m, 2),
        "constraint_x": _state_derivative(spec.constraint, m, 1),
        "constraint_xx": _state_derivative(spec.constraint, m, 2),
        "constraint_xxx": _state_derivative(spec.constraint, m, 3),
    }
    if spec.diffusion is not None:
        columns_first = _diffusion_columns_first(spec.diffusion)
        derived["diffusion_x"] = _jacobian_x(columns_first, m)
        derived["diffusion_u"] = _jacobian_u(columns_first, k)
    if only_missing:
        derived = {
            name: fn for name, fn in derived.items() if getattr(spec, name) is None
        }
    logger.debug("finite-difference derivatives for %s: %s", spec.name, sorted(derived))
    return dataclasses.replace(spec, **derived)


def check_derivatives(
    spec: ProblemSpec,
    samples: int = 100,
    seed: int = 0,
    state_scale: float = 2.0,
) -> dict[str, float]:
    """Compare supplied derivatives with central differences at random points.

    States are drawn uniformly from [-state_scale, state_scale]^m and controls
    uniformly from the box.

    Returns:
        Worst relative error |a - fd| / max(1, |a|) per derivative field
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(-state_scale, state_scale, size=(samples, spec.state_dim))
    u = rng.uniform(spec.box.lower, spec.box.upper, size=(samples, spec.control_dim))
    reference = finite_difference_derivatives(spec)

    errors: dict[str, float] = {}
    for name in DERIVATIVE_FIELDS:
        supplied = getattr(spec, name)
        if supplied is None:
            continue
        if name.startswith("diffusion") and spec.noise_free:
            continue
        estimate = getattr(reference, name)
        takes_control = name.startswith(("drift", "diffusion", "running"))
        a = np.asarray(supplied(x, u) if takes_control else supplied(x), dtype=float)
        fd = np.asarray(estimate(x, u) if takes_control else estimate(x), dtype=float)
        errors[name] = float(np.max(np.abs(a - fd) / np.maximum(1.0, np.abs(a))))
    return errors
