"""Tests for src/registry.py - builtin problems and families."""

import numpy as np
import pytest

from src.errors import ConfigError, RegistryError
from src.registry import (
    available_builtins,
    available_families,
    build_family,
    build_problem,
    register_builtin,
)


class TestRegisterBuiltin:
    """Tests for register_builtin."""

    def test_available(self) -> None:
        assert available_builtins() == [
            "example-affine",
            "example-flat",
            "example-kink",
            "toy-linear-deterministic",
            "toy-linear-sde",
        ]
        assert available_families() == ["scalar-polynomial"]

    def test_unknown_name_lists_valid_names(self) -> None:
        with pytest.raises(RegistryError) as exc_info:
            register_builtin("example-circle")
        message = str(exc_info.value)
        assert "example-circle" in message
        assert "example-kink" in message
        assert exc_info.value.exit_code == 2

    def test_unknown_parameter(self) -> None:
        """Parameters outside the builtin's own and common overrides are rejected."""
        with pytest.raises(ConfigError) as exc_info:
            register_builtin("toy-linear-sde", beta=1.0)
        assert exc_info.value.key_path == "problem.params.beta"

    def test_common_overrides(self) -> None:
        spec = register_builtin(
            "example-affine", alpha=0.5, horizon=2.0, box=[0.5, 3.0]
        )
        assert spec.alpha == 0.5
        assert spec.horizon == 2.0
        assert spec.box.low == (0.5,)
        assert spec.params["box"] == [[0.5, 3.0]]

    def test_trivial_override_rejected(self) -> None:
        with pytest.raises(ConfigError):
            register_builtin("example-kink", alpha=-1.0)

    @pytest.mark.parametrize(
        "name,noise_free",
        [
            ("example-affine", True),
            ("example-kink", True),
            ("example-flat", True),
            ("toy-linear-deterministic", True),
            ("toy-linear-sde", False),
        ],
    )
    def test_noise(self, name: str, noise_free: bool) -> None:
        assert register_builtin(name).noise_free is noise_free

    def test_toy_terminal_cost(self) -> None:
        """Terminal cost is w*(x - target)^2."""
        spec = register_builtin(
            "toy-linear-deterministic", terminal_weight=2.0, terminal_target=1.0
        )
        x = np.array([[0.0], [3.0]])
        np.testing.assert_allclose(spec.psi(x), [2.0, 8.0])
        np.testing.assert_allclose(spec.psi_x(x), [[-4.0], [8.0]])

    def test_recorded_params(self) -> None:
        spec = register_builtin("toy-linear-sde", theta=2.0)
        assert spec.params["theta"] == 2.0
        assert spec.params["noise"] == 0.2
        assert spec.params["x0"] == [0.0]


class TestFamilies:
    """Tests for build_family and build_problem."""

    def test_unknown_family(self) -> None:
        with pytest.raises(RegistryError) as exc_info:
            build_family("vector-polynomial")
        assert exc_info.value.key_path == "problem.family"

    def test_noise_free_without_diffusion_terms(self) -> None:
        assert build_family("scalar-polynomial").noise_free is True
        assert build_family("scalar-polynomial", {"s0": 0.1}).noise_free is False

    def test_family_has_all_derivatives(self) -> None:
        spec = build_family("scalar-polynomial", {"s1": 0.2})
        assert spec.missing_derivatives() == []

    def test_build_problem_dispatch(self) -> None:
        assert build_problem("example-flat").name == "example-flat"
        spec = build_problem("scalar-polynomial", family=True)
        assert spec.name == "scalar-polynomial"
