"""Tests for src/adjoint.py - backward adjoints, Hamiltonians and duality."""

import dataclasses
import math

import numpy as np
import pytest

from src.config import AdjointMode, MonteCarloSettings, Scheme
from src.errors import ConfigError, DegenerateIntervalError, IllConditionedError
from src.forward import (
    PathEnsemble,
    TerminalTimeResult,
    simulate,
    simulate_with_settings,
    terminal_time,
)
from src.adjoint import (
    FIRST,
    SECOND,
    basis_size,
    duality_check,
    hamiltonian,
    hamiltonian_gradient_curve,
    hamiltonian_u,
    max2_dual_check,
    quadratic_basis,
    solve_adjoint,
    solve_appendix_adjoint,
)
from src.grid import ControlPath
from src.problem import ProblemSpec
from src.registry import register_builtin
from src.variation import variational_paths


@pytest.fixture
def weighted_toy() -> ProblemSpec:
    """Toy problem with Psi = x^2."""
    return register_builtin("toy-linear-deterministic", terminal_weight=1.0)


def run(
    spec: ProblemSpec, settings: MonteCarloSettings
) -> tuple[PathEnsemble, TerminalTimeResult]:
    grid = spec.time_grid(settings.grid)
    base = simulate_with_settings(spec, spec.reference(grid), settings)
    return base, terminal_time(spec, base)[2]


class TestHamiltonian:
    """Tests for hamiltonian and hamiltonian_u."""

    def test_affine_values(self, affine_spec: ProblemSpec) -> None:
        """H = (x + u)p - u and H_u = p - 1."""
        x = np.array([[1.0]])
        u = np.array([[1.0]])
        p = np.array([[2.0]])
        q = np.zeros((1, 1, 1))
        assert hamiltonian(affine_spec, x, u, p, q)[0] == pytest.approx(3.0)
        assert hamiltonian_u(affine_spec, x, u, p, q)[0, 0] == pytest.approx(1.0)

    def test_noise_term(self, sde_spec: ProblemSpec) -> None:
        x = np.array([[0.0]])
        u = np.array([[0.5]])
        p = np.zeros((1, 1))
        q = np.full((1, 1, 1), 2.0)
        # sigma*q - u^2 = 0.2*2 - 0.25
        assert hamiltonian(sde_spec, x, u, p, q)[0] == pytest.approx(0.15)


class TestBasis:
    def test_quadratic_basis_columns(self) -> None:
        x = np.array([[2.0, 3.0]])
        np.testing.assert_array_equal(
            quadratic_basis(x), [[1.0, 2.0, 3.0, 4.0, 6.0, 9.0]]
        )
        assert basis_size(2) == 6
        assert basis_size(1) == 3


class TestDeterministicAdjoint:
    """Tests for the Euler and RK4 backward solvers."""

    def test_affine_first_adjoint_vanishes(
        self,
        affine_spec: ProblemSpec,
        affine_ensemble: PathEnsemble,
        affine_ttr: TerminalTimeResult,
    ) -> None:
        """Psi = 0 and f_x = 0 give p = 0, so H_u = -f_u = -1."""
        adjoint = solve_adjoint(affine_spec, affine_ensemble, affine_ttr)
        assert adjoint.mode is AdjointMode.DETERMINISTIC
        assert adjoint.kind == FIRST
        assert not adjoint.p.any()
        assert adjoint.p.shape == (1, affine_ttr.truncated.cells + 1, 1)
        curve = hamiltonian_gradient_curve(affine_spec, affine_ensemble, adjoint)
        np.testing.assert_array_equal(curve.gradient, -1.0)

    def test_weighted_toy_adjoint_is_constant(self, weighted_toy: ProblemSpec) -> None:
        """b_x = f_x = 0: p stays at -Psi_x(X(tau)) = -1."""
        base, ttr = run(weighted_toy, MonteCarloSettings(grid=200))
        adjoint = solve_adjoint(weighted_toy, base, ttr)
        np.testing.assert_allclose(adjoint.p, -1.0)
        rows = adjoint.rows()
        assert len(rows) == ttr.truncated.cells + 1
        assert rows[-1][0] == pytest.approx(ttr.tau)
        assert len(rows[0]) == 3

    @pytest.mark.parametrize("scheme", [Scheme.EULER, Scheme.RK4])
    def test_first_duality(self, weighted_toy: ProblemSpec, scheme: Scheme) -> None:
        """E[-Psi_x y(tau)] equals the integral of p b_u v + f_x y."""
        base, ttr = run(weighted_toy, MonteCarloSettings(grid=200, scheme=scheme))
        adjoint = solve_adjoint(weighted_toy, base, ttr)
        direction = ControlPath.constant(base.grid, 1.0)
        variational = variational_paths(weighted_toy, base, direction)
        result = duality_check(weighted_toy, base, ttr, adjoint, variational)
        assert result.lhs == pytest.approx(-0.5)
        assert result.defect < 1e-8
        assert result.se == 0.0

    def test_second_duality_is_exact_for_euler(
        self,
        affine_spec: ProblemSpec,
        affine_ensemble: PathEnsemble,
        affine_ttr: TerminalTimeResult,
    ) -> None:
        """The discrete second adjoint reproduces the integral of hbar to round-off."""
        second = solve_appendix_adjoint(affine_spec, affine_ensemble, affine_ttr)
        assert second.kind == SECOND
        assert not second.p[:, -1].any()
        direction = ControlPath.constant(affine_ensemble.grid, 1.0)
        variational = variational_paths(affine_spec, affine_ensemble, direction)
        result = max2_dual_check(
            affine_spec, affine_ensemble, affine_ttr, second, variational
        )
        assert result.lhs == pytest.approx(1.0, abs=5e-3)
        assert result.defect < 1e-10
        assert result.to_dict()["defect"] == result.defect

    def test_second_duality_rk4(self, affine_spec: ProblemSpec) -> None:
        base, ttr = run(affine_spec, MonteCarloSettings(grid=400, scheme=Scheme.RK4))
        second = solve_appendix_adjoint(affine_spec, base, ttr)
        variational = variational_paths(
            affine_spec, base, ControlPath.constant(base.grid, 1.0)
        )
        result = max2_dual_check(affine_spec, base, ttr, second, variational)
        assert result.defect < 1e-4

    def test_zero_tau_rejected(
        self,
        affine_spec: ProblemSpec,
        affine_ensemble: PathEnsemble,
        affine_ttr: TerminalTimeResult,
    ) -> None:
        degenerate = dataclasses.replace(affine_ttr, tau=0.0)
        with pytest.raises(DegenerateIntervalError):
            solve_adjoint(affine_spec, affine_ensemble, degenerate)

    def test_deterministic_mode_needs_noise_free(self, sde_spec: ProblemSpec) -> None:
        base, ttr = run(sde_spec, MonteCarloSettings(grid=50, paths=100))
        with pytest.raises(ConfigError) as exc_info:
            solve_adjoint(sde_spec, base, ttr, AdjointMode.DETERMINISTIC)
        assert exc_info.value.key_path == "verification.adjoint_mode"


class TestRegressionAdjoint:
    """Tests for the least-squares backward induction."""

    def test_too_few_paths(self, sde_spec: ProblemSpec) -> None:
        """Fewer than 10 paths per basis function is ill-conditioned."""
        base, ttr = run(sde_spec, MonteCarloSettings(grid=50, paths=20))
        with pytest.raises(IllConditionedError):
            solve_adjoint(sde_spec, base, ttr)

    def test_stochastic_adjoint(self, sde_spec: ProblemSpec) -> None:
        """p(0) averages -2 E X(tau) = -2 alpha and q is near -2*noise."""
        base, ttr = run(sde_spec, MonteCarloSettings(grid=100, paths=2000, seed=8))
        adjoint = solve_adjoint(sde_spec, base, ttr)
        assert adjoint.mode is AdjointMode.REGRESSION
        p0 = float(adjoint.p[:, 0].mean())
        assert p0 == pytest.approx(-2.0 * sde_spec.alpha, abs=1e-6)
        assert float(adjoint.q.mean()) == pytest.approx(-0.4, abs=0.1)
        assert len(adjoint.coefficients) == ttr.truncated.cells
        rows = adjoint.coefficient_rows()
        assert len(rows) == 2 * ttr.truncated.cells
        assert len(rows[0]) == 2 + basis_size(1)

    def test_adjoint_matches_closed_form(self, sde_spec: ProblemSpec) -> None:
        """p(t) = -2(X(t) + theta*u*(tau - t)) and q = -2*noise with theta*u = 0.5.

        N = 25 puts tau = 0.5 in the middle of cell 12, so the last cell is partial.
        """
        base, ttr = run(sde_spec, MonteCarloSettings(grid=25, paths=10_000, seed=21))
        adjoint = solve_adjoint(sde_spec, base, ttr)
        cells = adjoint.cells
        assert 0.2 < ttr.fraction < 0.8

        t = ttr.grid.nodes[:cells]
        closed = -2.0 * (base.states[:, :cells, 0] + 0.5 * (ttr.tau - t))
        error = adjoint.p[:, :cells, 0] - closed
        relative = math.sqrt(np.mean(error**2) / np.mean(closed**2))
        assert relative < 0.02

        q_cells = adjoint.q[:, :, 0, 0].mean(axis=0)
        interior = q_cells[:-1]
        se = float(interior.std(ddof=1) / math.sqrt(interior.size))
        assert abs(float(interior.mean()) + 0.4) <= max(0.02 * 0.4, 3.0 * se)
        assert q_cells[-1] == pytest.approx(-0.4, abs=0.15)

    def test_duality_identities_hold(self, sde_spec: ProblemSpec) -> None:
        """Both identities agree within max(2%, 3 se) for a time-varying v."""
        settings = MonteCarloSettings(grid=50, paths=5000, seed=9)
        base, ttr = run(sde_spec, settings)
        direction = ControlPath.from_function(ttr.grid, lambda t: 1.0 + t)
        variational = variational_paths(sde_spec, base, direction)
        first = duality_check(
            sde_spec, base, ttr, solve_adjoint(sde_spec, base, ttr), variational
        )
        second = max2_dual_check(
            sde_spec,
            base,
            ttr,
            solve_appendix_adjoint(sde_spec, base, ttr),
            variational,
        )
        for result in (first, second):
            assert result.defect <= max(0.02 * abs(result.lhs), 3.0 * result.se)
        # y(tau) = tau + tau²/2 and E X(tau) = alpha
        y_tau = ttr.tau + 0.5 * ttr.tau**2
        assert first.lhs == pytest.approx(-2.0 * sde_spec.alpha * y_tau, rel=0.02)
        assert second.lhs == pytest.approx(y_tau, rel=0.02)

    def test_regression_on_noise_free_problem(self, affine_spec: ProblemSpec) -> None:
        """Forced regression on identical paths still fits constants."""
        grid = affine_spec.time_grid(100)
        base = simulate(affine_spec, affine_spec.reference(grid), grid, 40, 0)
        ttr = terminal_time(affine_spec, base)[2]
        adjoint = solve_adjoint(affine_spec, base, ttr, AdjointMode.REGRESSION)
        np.testing.assert_allclose(adjoint.p, 0.0, atol=1e-12)
        np.testing.assert_allclose(adjoint.q, 0.0, atol=1e-12)
