"""Registry of builtin problems and parameterized problem families.

Builtins carry analytic derivatives; families are declared by their
coefficient functions and get finite-difference derivatives.

Every builtin and family accepts the overrides ``horizon``, ``alpha``,
``x0`` and ``box`` in addition to its own parameters.
"""

from __future__ import annotations

from collections.abc import Callable
from typing import Any

import numpy as np

from .error_messages import DiagnosticMessages
from .errors import ConfigError, RegistryError
from .grid import ControlBox
from .problem import FloatArray, ProblemSpec, finite_difference_derivatives


COMMON_OVERRIDES = ("horizon", "alpha", "x0", "box")


# ============================================================================
# Scalar helpers (m = k = d = 1)
# ============================================================================


def _col(values: FloatArray) -> FloatArray:
    """(n,) -> (n, 1)"""
    return values[:, None]


def _const(value: float, *trailing: int) -> Callable[..., FloatArray]:
    def fn(x: FloatArray, *_: FloatArray) -> FloatArray:
        return np.full((x.shape[0], *trailing), value)

    return fn


def _identity_constraint(x: FloatArray) -> FloatArray:
    return x[:, 0].copy()


def _scalar_base(
    name: str,
    defaults: dict[str, Any],
    params: dict[str, Any],
    own: tuple[str, ...],
) -> dict[str, Any]:
    allowed = set(own) | set(COMMON_OVERRIDES)
    unknown = sorted(set(params) - allowed)
    if unknown:
        raise ConfigError(
            DiagnosticMessages.unknown_config_key(
                f"problem.params.{unknown[0]}", sorted(allowed)
            ),
            key_path=f"problem.params.{unknown[0]}",
        )
    merged = {**defaults, **params}
    merged["box"] = ControlBox.from_bounds(merged["box"])
    merged["x0"] = np.atleast_1d(np.asarray(merged["x0"], dtype=float))
    merged["horizon"] = float(merged["horizon"])
    merged["alpha"] = float(merged["alpha"])
    merged["name"] = name
    return merged


def _linear_constraint_fields() -> dict[str, Any]:
    return {
        "constraint": _identity_constraint,
        "constraint_x": _const(1.0, 1),
        "constraint_xx": _const(0.0, 1, 1),
        "constraint_xxx": _const(0.0, 1, 1, 1),
    }


def _zero_terminal_fields() -> dict[str, Any]:
    return {
        "terminal_cost": _const(0.0),
        "terminal_cost_x": _const(0.0, 1),
        "terminal_cost_xx": _const(0.0, 1, 1),
    }


def _recorded(merged: dict[str, Any]) -> dict[str, Any]:
    record = {}
    for key, value in merged.items():
        if key == "name":
            continue
        if isinstance(value, ControlBox):
            pairs = zip(value.low, value.high, strict=True)
            record[key] = [list(pair) for pair in pairs]
        elif isinstance(value, np.ndarray):
            record[key] = value.tolist()
        else:
            record[key] = value
    return record


# ============================================================================
# Builtins
# ============================================================================


def _control_drift(
    merged: dict[str, Any], reference: Callable[[float], float]
) -> ProblemSpec:
    """b = u, sigma = 0, f = Psi = 0, Phi = x."""
    return ProblemSpec(
        name=merged["name"],
        state_dim=1,
        control_dim=1,
        noise_dim=1,
        drift=lambda x, u: u.copy(),
        drift_x=_const(0.0, 1, 1),
        drift_u=_const(1.0, 1, 1),
        running_cost=_const(0.0),
        running_cost_x=_const(0.0, 1),
        running_cost_u=_const(0.0, 1),
        horizon=merged["horizon"],
        alpha=merged["alpha"],
        x0=merged["x0"],
        box=merged["box"],
        reference_control=reference,
        params=_recorded(merged),
        **_zero_terminal_fields(),
        **_linear_constraint_fields(),
    )


def _kink_reference(t: float) -> float:
    return 1.0 if t <= 1.0 else 0.5


def _flat_reference(t: float) -> float:
    return 2.0 - 2.0 * t


def example_kink(**params: Any) -> ProblemSpec:
    """Mean constraint rate jumps at the terminal time (tau = 1)."""
    defaults = {"horizon": 2.0, "alpha": 1.0, "x0": [0.0], "box": [0.0, 2.0]}
    merged = _scalar_base("example-kink", defaults, params, ())
    return _control_drift(merged, _kink_reference)


def example_flat(**params: Any) -> ProblemSpec:
    """Mean constraint rate vanishes at the terminal time (X = 2t - t^2)."""
    defaults = {"horizon": 2.0, "alpha": 1.0, "x0": [0.0], "box": [-3.0, 3.0]}
    merged = _scalar_base("example-flat", defaults, params, ())
    return _control_drift(merged, _flat_reference)


def example_affine(**params: Any) -> ProblemSpec:
    """b = x + u, f = u, Phi = x; the optimum is u = 1 with tau = ln 2."""
    defaults = {"horizon": 1.0, "alpha": 1.0, "x0": [0.0], "box": [1.0, 2.0]}
    merged = _scalar_base("example-affine", defaults, params, ())
    return ProblemSpec(
        name=merged["name"],
        state_dim=1,
        control_dim=1,
        noise_dim=1,
        drift=lambda x, u: x + u,
        drift_x=_const(1.0, 1, 1),
        drift_u=_const(1.0, 1, 1),
        running_cost=lambda x, u: u[:, 0].copy(),
        running_cost_x=_const(0.0, 1),
        running_cost_u=_const(1.0, 1),
        horizon=merged["horizon"],
        alpha=merged["alpha"],
        x0=merged["x0"],
        box=merged["box"],
        reference_control=lambda t: 1.0,
        params=_recorded(merged),
        **_zero_terminal_fields(),
        **_linear_constraint_fields(),
    )


def toy_linear_deterministic(**params: Any) -> ProblemSpec:
    """b = u, f = u^2, Phi = x, Psi = w*(x - target)^2."""
    defaults = {
        "horizon": 1.0,
        "alpha": 0.5,
        "x0": [0.0],
        "box": [0.0, 2.0],
        "terminal_weight": 0.0,
        "terminal_target": 0.0,
    }
    merged = _scalar_base(
        "toy-linear-deterministic",
        defaults,
        params,
        ("terminal_weight", "terminal_target"),
    )
    weight = float(merged["terminal_weight"])
    target = float(merged["terminal_target"])
    return ProblemSpec(
        name=merged["name"],
        state_dim=1,
        control_dim=1,
        noise_dim=1,
        drift=lambda x, u: u.copy(),
        drift_x=_const(0.0, 1, 1),
        drift_u=_const(1.0, 1, 1),
        running_cost=lambda x, u: u[:, 0] ** 2,
        running_cost_x=_const(0.0, 1),
        running_cost_u=lambda x, u: 2.0 * u,
        terminal_cost=lambda x: weight * (x[:, 0] - target) ** 2,
        terminal_cost_x=lambda x: 2.0 * weight * (x - target),
        terminal_cost_xx=_const(2.0 * weight, 1, 1),
        horizon=merged["horizon"],
        alpha=merged["alpha"],
        x0=merged["x0"],
        box=merged["box"],
        reference_control=lambda t: 1.0,
        params=_recorded(merged),
        **_linear_constraint_fields(),
    )


def toy_linear_sde(**params: Any) -> ProblemSpec:
    """b = theta*u, sigma = noise, Phi = x, f = u^2, Psi = x^2."""
    defaults = {
        "horizon": 1.0,
        "alpha": 0.25,
        "x0": [0.0],
        "box": [0.0, 2.0],
        "theta": 1.0,
        "noise": 0.2,
    }
    merged = _scalar_base("toy-linear-sde", defaults, params, ("theta", "noise"))
    theta = float(merged["theta"])
    noise = float(merged["noise"])
    return ProblemSpec(
        name=merged["name"],
        state_dim=1,
        control_dim=1,
        noise_dim=1,
        drift=lambda x, u: theta * u,
        drift_x=_const(0.0, 1, 1),
        drift_u=_const(theta, 1, 1),
        diffusion=_const(noise, 1, 1),
        diffusion_x=_const(0.0, 1, 1, 1),
        diffusion_u=_const(0.0, 1, 1, 1),
        running_cost=lambda x, u: u[:, 0] ** 2,
        running_cost_x=_const(0.0, 1),
        running_cost_u=lambda x, u: 2.0 * u,
        terminal_cost=lambda x: x[:, 0] ** 2,
        terminal_cost_x=lambda x: 2.0 * x,
        terminal_cost_xx=_const(2.0, 1, 1),
        horizon=merged["horizon"],
        alpha=merged["alpha"],
        x0=merged["x0"],
        box=merged["box"],
        reference_control=lambda t: 0.5,
        params=_recorded(merged),
        **_linear_constraint_fields(),
    )


# ============================================================================
# Families
# ============================================================================


def scalar_polynomial(**params: Any) -> ProblemSpec:
    """Scalar problem with polynomial coefficients.

    b = a*x + e*x^2 + c*u, sigma = s0 + s1*x, f = q*x^2 + r*u^2,
    Psi = w*x^2, Phi = phi1*x + phi2*x^2 + phi3*x^3. With s0 = s1 = 0 the
    problem is noise-free.
    """
    coefficients = {
        "a": 0.5,
        "e": 0.3,
        "c": 1.0,
        "s0": 0.0,
        "s1": 0.0,
        "q": 0.5,
        "r": 1.0,
        "w": 1.0,
        "phi1": 1.0,
        "phi2": 0.5,
        "phi3": 0.0,
    }
    defaults = {
        "horizon": 1.0,
        "alpha": 1.0,
        "x0": [0.0],
        "box": [0.0, 2.0],
        **coefficients,
    }
    merged = _scalar_base("scalar-polynomial", defaults, params, tuple(coefficients))
    p = {name: float(merged[name]) for name in coefficients}

    def constraint(x: FloatArray) -> FloatArray:
        z = x[:, 0]
        return p["phi1"] * z + p["phi2"] * z**2 + p["phi3"] * z**3

    diffusion = None
    if p["s0"] != 0.0 or p["s1"] != 0.0:
        diffusion = lambda x, u: (p["s0"] + p["s1"] * x)[:, :, None]  # noqa: E731

    spec = ProblemSpec(
        name=merged["name"],
        state_dim=1,
        control_dim=1,
        noise_dim=1,
        drift=lambda x, u: p["a"] * x + p["e"] * x**2 + p["c"] * u,
        diffusion=diffusion,
        running_cost=lambda x, u: p["q"] * x[:, 0] ** 2 + p["r"] * u[:, 0] ** 2,
        terminal_cost=lambda x: p["w"] * x[:, 0] ** 2,
        constraint=constraint,
        horizon=merged["horizon"],
        alpha=merged["alpha"],
        x0=merged["x0"],
        box=merged["box"],
        reference_control=lambda t: 1.0,
        params=_recorded(merged),
    )
    return finite_difference_derivatives(spec)


_BUILTINS: dict[str, Callable[..., ProblemSpec]] = {
    "example-kink": example_kink,
    "example-flat": example_flat,
    "example-affine": example_affine,
    "toy-linear-deterministic": toy_linear_deterministic,
    "toy-linear-sde": toy_linear_sde,
}

_FAMILIES: dict[str, Callable[..., ProblemSpec]] = {
    "scalar-polynomial": scalar_polynomial,
}


def available_builtins() -> list[str]:
    return sorted(_BUILTINS)


def available_families() -> list[str]:
    return sorted(_FAMILIES)


def register_builtin(name: str, **params: Any) -> ProblemSpec:
    """Return a fully specified builtin problem.

    Args:
        name: Registered builtin name
        **params: Builtin parameters and common overrides

    Raises:
        RegistryError: Unknown name (message lists valid names)
        ConfigError: Unknown parameter or invalid problem data
    """
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise RegistryError(
            DiagnosticMessages.unknown_builtin(name, available_builtins()),
            key_path="problem",
        )
    return factory(**params)


def build_family(name: str, params: dict[str, Any] | None = None) -> ProblemSpec:
    """Return a problem from a parameterized family."""
    try:
        factory = _FAMILIES[name]
    except KeyError:
        raise RegistryError(
            DiagnosticMessages.unknown_builtin(name, available_families()),
            key_path="problem.family",
        )
    return factory(**(params or {}))


def build_problem(
    name: str, family: bool = False, params: dict[str, Any] | None = None
) -> ProblemSpec:
    """Build a builtin or family problem from a config selection."""
    if family:
        return build_family(name, params)
    return register_builtin(name, **(params or {}))
