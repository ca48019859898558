"""Tests for src/forward.py - simulation, mean/rate curves and terminal time."""

import math

import numpy as np
import pytest

from src.config import MonteCarloSettings, Scheme
from src.errors import ConfigError, ContractError, SimulationError
from src.forward import (
    Case,
    MeanCurve,
    PathEnsemble,
    TerminalTimeResult,
    cell_controls,
    ensemble_summary,
    h_curve,
    hermite,
    hitting_time,
    integrate_to_tau,
    mean_phi,
    mean_rate_crosscheck,
    resimulate_with_control,
    simulate,
    simulate_with_settings,
    terminal_time,
)
from src.grid import ControlPath
from src.problem import ProblemSpec
from src.registry import build_family, register_builtin


def run(
    spec: ProblemSpec, settings: MonteCarloSettings, control: ControlPath | None = None
) -> TerminalTimeResult:
    grid = spec.time_grid(settings.grid)
    control = control or spec.reference(grid)
    return terminal_time(spec, simulate_with_settings(spec, control, settings))[2]


class TestSimulate:
    """Tests for simulate."""

    def test_deterministic_affine_matches_euler_recursion(
        self, affine_ensemble: PathEnsemble
    ) -> None:
        """Euler on x' = x + 1 gives x_i = (1 + dt)^i - 1."""
        grid = affine_ensemble.grid
        expected = (1.0 + grid.dt) ** np.arange(grid.steps + 1) - 1.0
        np.testing.assert_allclose(
            affine_ensemble.states[0, :, 0], expected, atol=1e-12
        )
        assert affine_ensemble.path_count == 1
        assert affine_ensemble.deterministic

    def test_noise_free_increments_are_zero(
        self, affine_ensemble: PathEnsemble
    ) -> None:
        increments = affine_ensemble.require_increments()
        assert increments.shape == (1, affine_ensemble.grid.steps, 1)
        assert not increments.any()

    def test_rk4_is_accurate(
        self, affine_spec: ProblemSpec, rk4_settings: MonteCarloSettings
    ) -> None:
        grid = affine_spec.time_grid(rk4_settings.grid)
        ensemble = simulate_with_settings(
            affine_spec, ControlPath.constant(grid, 1.0, affine_spec.box), rk4_settings
        )
        assert ensemble.states[0, -1, 0] == pytest.approx(math.e - 1.0, abs=1e-10)

    def test_rk4_rejects_noise(self, sde_spec: ProblemSpec) -> None:
        grid = sde_spec.time_grid(20)
        with pytest.raises(ConfigError) as exc_info:
            simulate(sde_spec, sde_spec.reference(grid), grid, 10, 1, scheme=Scheme.RK4)
        assert exc_info.value.key_path == "monte_carlo.scheme"

    def test_rejects_zero_paths(self, affine_spec: ProblemSpec) -> None:
        grid = affine_spec.time_grid(20)
        with pytest.raises(ConfigError):
            simulate(affine_spec, affine_spec.reference(grid), grid, 0, 1)

    def test_same_seed_reproduces(self, sde_spec: ProblemSpec) -> None:
        grid = sde_spec.time_grid(50)
        control = sde_spec.reference(grid)
        first = simulate(sde_spec, control, grid, 100, seed=5)
        second = simulate(sde_spec, control, grid, 100, seed=5)
        other = simulate(sde_spec, control, grid, 100, seed=6)
        np.testing.assert_array_equal(first.states, second.states)
        assert not np.array_equal(first.states, other.states)

    def test_thread_count_does_not_change_paths(self, sde_spec: ProblemSpec) -> None:
        """Block-seeded streams give identical paths for any thread count."""
        grid = sde_spec.time_grid(20)
        control = sde_spec.reference(grid)
        single = simulate(sde_spec, control, grid, 2500, seed=3, threads=1)
        pooled = simulate(sde_spec, control, grid, 2500, seed=3, threads=4)
        np.testing.assert_array_equal(single.states, pooled.states)
        np.testing.assert_array_equal(single.increments, pooled.increments)

    def test_prefix_paths_are_stable(self, sde_spec: ProblemSpec) -> None:
        """Adding paths leaves the existing ones unchanged."""
        grid = sde_spec.time_grid(20)
        control = sde_spec.reference(grid)
        small = simulate(sde_spec, control, grid, 10, seed=9)
        large = simulate(sde_spec, control, grid, 20, seed=9)
        np.testing.assert_array_equal(small.states, large.states[:10])

    def test_overflow_names_path_and_node(self) -> None:
        spec = build_family("scalar-polynomial", {"e": 1e6})
        grid = spec.time_grid(100)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(SimulationError) as exc_info:
                simulate(spec, spec.reference(grid), grid, 1, 0)
        assert exc_info.value.path == 0
        assert exc_info.value.node >= 1
        assert exc_info.value.key_path == f"X[0][{exc_info.value.node}]"

    def test_retain_increments_off(self, sde_spec: ProblemSpec) -> None:
        grid = sde_spec.time_grid(20)
        ensemble = simulate(
            sde_spec, sde_spec.reference(grid), grid, 5, 1, retain_increments=False
        )
        with pytest.raises(ContractError):
            ensemble.require_increments()

    def test_resimulate_reuses_increments(self, sde_spec: ProblemSpec) -> None:
        grid = sde_spec.time_grid(20)
        base = simulate(sde_spec, sde_spec.reference(grid), grid, 50, 2)
        again = resimulate_with_control(base, sde_spec, sde_spec.reference(grid))
        np.testing.assert_array_equal(base.states, again.states)
        faster = ControlPath.constant(grid, 1.0, sde_spec.box)
        moved = resimulate_with_control(base, sde_spec, faster)
        # Same noise, drift doubled: the difference is deterministic.
        np.testing.assert_allclose(
            moved.states[:, -1, 0] - base.states[:, -1, 0], 0.5, atol=1e-12
        )

    def test_common_random_numbers_reduce_variance(
        self, sde_spec: ProblemSpec
    ) -> None:
        """Quotients of E Psi(X(T)) scatter far less with shared increments."""
        grid = sde_spec.time_grid(50)
        reference = sde_spec.reference(grid)
        rho = 0.05
        moved_control = reference.perturbed(ControlPath.constant(grid, 1.0), rho)

        def terminal_cost(ensemble: PathEnsemble) -> float:
            return float(sde_spec.psi(ensemble.states[:, -1]).mean())

        shared, independent = [], []
        for seed in range(20):
            base = simulate(sde_spec, reference, grid, 200, seed)
            moved = resimulate_with_control(base, sde_spec, moved_control)
            fresh = simulate(sde_spec, moved_control, grid, 200, seed + 1000)
            shared.append((terminal_cost(moved) - terminal_cost(base)) / rho)
            independent.append((terminal_cost(fresh) - terminal_cost(base)) / rho)
        assert np.var(shared, ddof=1) < 0.05 * np.var(independent, ddof=1)

    def test_cell_controls_broadcast(self, affine_spec: ProblemSpec) -> None:
        grid = affine_spec.time_grid(10)
        control = ControlPath.from_function(grid, lambda t: 1.0 + t, affine_spec.box)
        full = cell_controls(control, 3)
        assert full.shape == (3, 10, 1)
        np.testing.assert_array_equal(full[2], control.values)
        head = cell_controls(control, 3, cells=2)
        assert head.shape == (3, 2, 1)
        np.testing.assert_array_equal(head[0], control.values[:2])


class TestCurves:
    """Tests for mean_phi, h_curve and the cross-check."""

    def test_mean_starts_at_phi_x0(
        self, affine_spec: ProblemSpec, affine_ensemble: PathEnsemble
    ) -> None:
        mean = mean_phi(affine_ensemble, affine_spec)
        assert mean.values[0] == affine_spec.phi_x0
        assert not mean.se.any()

    def test_affine_rate(
        self, affine_spec: ProblemSpec, affine_ensemble: PathEnsemble
    ) -> None:
        """h = X + u for Phi = x."""
        rate = h_curve(affine_ensemble, affine_spec)
        np.testing.assert_allclose(rate.right, affine_ensemble.states[0, :, 0] + 1.0)
        np.testing.assert_allclose(rate.left, rate.right)

    def test_kink_right_and_left_limits(self, kink_spec: ProblemSpec) -> None:
        grid = kink_spec.time_grid(20)
        ensemble = simulate(kink_spec, kink_spec.reference(grid), grid, 1, 0)
        rate = h_curve(ensemble, kink_spec)
        node = 10  # t = 1
        assert rate.left[node] == 1.0
        assert rate.right[node] == 0.5

    def test_crosscheck_is_tiny_for_euler(
        self, affine_spec: ProblemSpec, affine_ensemble: PathEnsemble
    ) -> None:
        mean = mean_phi(affine_ensemble, affine_spec)
        rate = h_curve(affine_ensemble, affine_spec)
        assert mean_rate_crosscheck(mean, rate, affine_spec) < 1e-9

    def test_summary_rows(self, toy_ensemble: PathEnsemble) -> None:
        rows = ensemble_summary(toy_ensemble)
        assert len(rows) == toy_ensemble.grid.steps + 1
        assert rows[-1][0] == 1.0
        assert rows[-1][1] == pytest.approx(1.0)
        assert rows[-1][2] == 0.0


class TestHittingTime:
    """Tests for hitting_time and the case classification."""

    def test_affine_tau(self, affine_ttr: TerminalTimeResult) -> None:
        """u = 1 reaches Phi = 1 at ln 2 with h = 2."""
        assert affine_ttr.case is Case.I
        assert affine_ttr.tau == pytest.approx(math.log(2.0), abs=1e-3)
        assert affine_ttr.h_at_tau == pytest.approx(2.0, abs=5e-3)
        assert affine_ttr.flags() == []
        assert affine_ttr.truncated.tau == pytest.approx(affine_ttr.tau)

    def test_affine_rk4_tau(
        self, affine_spec: ProblemSpec, rk4_settings: MonteCarloSettings
    ) -> None:
        grid = affine_spec.time_grid(rk4_settings.grid)
        control = ControlPath.constant(grid, 1.0, affine_spec.box)
        ttr = run(affine_spec, rk4_settings, control)
        assert ttr.tau == pytest.approx(math.log(2.0), abs=1e-6)

    def test_toy_tau(
        self, toy_spec: ProblemSpec, toy_ensemble: PathEnsemble
    ) -> None:
        ttr = terminal_time(toy_spec, toy_ensemble)[2]
        assert ttr.tau == pytest.approx(0.5, abs=1e-9)
        assert ttr.h_at_tau == pytest.approx(1.0)

    def test_kink_is_discontinuous(
        self, kink_spec: ProblemSpec, euler_settings: MonteCarloSettings
    ) -> None:
        """Rate jumps from 1 to 0.5 at tau = 1."""
        ttr = run(kink_spec, euler_settings)
        assert ttr.case is Case.I
        assert ttr.tau == pytest.approx(1.0, abs=1e-6)
        assert ttr.h_at_tau == pytest.approx(1.0)
        assert ttr.h_discontinuous
        assert not ttr.degenerate_h
        assert ttr.jump_statistic == pytest.approx(0.5)

    def test_flat_is_degenerate(
        self, flat_spec: ProblemSpec, euler_settings: MonteCarloSettings
    ) -> None:
        """X = 2t - t^2 touches 1 with zero slope."""
        ttr = run(flat_spec, euler_settings)
        assert ttr.tau == pytest.approx(1.0, abs=1e-3)
        assert abs(ttr.h_at_tau) < 2e-3
        assert ttr.degenerate_h
        assert not ttr.h_discontinuous
        assert "degenerate_h" in ttr.flags()

    def test_case_three(self) -> None:
        """alpha out of reach: tau = T, cell N-1 with fraction 1."""
        spec = register_builtin("toy-linear-deterministic", alpha=5.0)
        ttr = run(spec, MonteCarloSettings(grid=100))
        assert ttr.case is Case.III
        assert ttr.tau == spec.horizon
        assert (ttr.cell, ttr.fraction) == (99, 1.0)
        assert ttr.crossing_index is None
        assert ttr.alpha_gap == pytest.approx(-4.0)
        assert not ttr.needs_rate_hypotheses

    def test_case_two_crossing_at_horizon(self) -> None:
        spec = register_builtin("toy-linear-deterministic", alpha=1.0)
        ttr = run(spec, MonteCarloSettings(grid=100))
        assert ttr.case is Case.II
        assert ttr.tau == 1.0
        assert ttr.needs_rate_hypotheses

    def test_case_two_near_miss(self) -> None:
        """A gap within case_tol*|h| at T still counts as reaching alpha."""
        spec = register_builtin("toy-linear-deterministic", alpha=1.0 + 1e-4)
        ttr = run(spec, MonteCarloSettings(grid=100))
        assert ttr.case is Case.II
        assert ttr.crossing_index is None

    def test_case_tol_override(self) -> None:
        spec = register_builtin("toy-linear-deterministic", alpha=0.9)
        settings = MonteCarloSettings(grid=100)
        grid = spec.time_grid(100)
        ensemble = simulate_with_settings(spec, spec.reference(grid), settings)
        assert terminal_time(spec, ensemble)[2].case is Case.I
        assert terminal_time(spec, ensemble, case_tol=0.2)[2].case is Case.II

    def test_rejects_nonpositive_case_tol(
        self, toy_spec: ProblemSpec, toy_ensemble: PathEnsemble
    ) -> None:
        with pytest.raises(ConfigError):
            terminal_time(toy_spec, toy_ensemble, case_tol=0.0)

    def test_rejects_nonfinite_mean(
        self, toy_spec: ProblemSpec, toy_ensemble: PathEnsemble
    ) -> None:
        mean = mean_phi(toy_ensemble, toy_spec)
        values = mean.values.copy()
        values[7] = np.nan
        broken = MeanCurve(mean.grid, values, mean.se)
        with pytest.raises(ContractError) as exc_info:
            hitting_time(broken, h_curve(toy_ensemble, toy_spec), toy_spec)
        assert exc_info.value.key_path == "m[7]"

    def test_to_dict(self, affine_ttr: TerminalTimeResult) -> None:
        data = affine_ttr.to_dict()
        assert data["case"] == "I"
        assert set(data) >= {"tau", "h_at_tau", "degenerate_h", "h_discontinuous"}

    @pytest.mark.slow
    def test_stochastic_tau(self, sde_spec: ProblemSpec) -> None:
        """E X = 0.5 t under the reference control, so tau = 0.5."""
        ttr = run(sde_spec, MonteCarloSettings(grid=100, paths=4000, seed=1))
        assert ttr.case is Case.I
        assert ttr.tau == pytest.approx(0.5, abs=0.03)

    def test_euler_tau_converges_with_grid(self, affine_spec: ProblemSpec) -> None:
        """|tau_N - tau_2N| shrinks as the grid is refined, roughly halving."""
        taus = [
            run(affine_spec, MonteCarloSettings(grid=n)).tau
            for n in (100, 200, 400, 800)
        ]
        gaps = [abs(a - b) for a, b in zip(taus, taus[1:], strict=False)]
        assert gaps[1] < gaps[0]
        assert gaps[2] < gaps[1]
        assert all(
            0.3 < later / earlier < 0.7
            for earlier, later in zip(gaps, gaps[1:], strict=False)
        )
        assert taus[-1] == pytest.approx(math.log(2.0), abs=2e-3)


class TestQuadrature:
    def test_integrate_constant_gives_tau(self, affine_ttr: TerminalTimeResult) -> None:
        ones = np.ones((1, affine_ttr.grid.steps))
        for scheme in (Scheme.EULER, Scheme.RK4):
            integral = integrate_to_tau(ones, ones, affine_ttr, scheme)
            assert integral[0] == pytest.approx(affine_ttr.tau)

    def test_hermite_endpoints(self) -> None:
        z0, z1 = np.array([1.0]), np.array([3.0])
        d0, d1 = np.array([0.5]), np.array([-0.5])
        assert hermite(z0, z1, d0, d1, 0.1, 0.0) == pytest.approx(z0)
        assert hermite(z0, z1, d0, d1, 0.1, 1.0) == pytest.approx(z1)
