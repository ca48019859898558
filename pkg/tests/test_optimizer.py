"""Tests for src/optimizer.py - descent loop and the Bellman oracle."""

import math

import numpy as np
import pytest

from src.config import ArmijoSettings, MonteCarloSettings
from src.errors import ConfigError
from src.grid import ControlPath
from src.optimizer import (
    DEGENERATE_ENCOUNTERED,
    MAX_ITERS,
    SMP_SATISFIED,
    corner_targets,
    dp_oracle,
    improve,
)
from src.problem import ProblemSpec
from src.registry import register_builtin


@pytest.fixture
def coarse() -> MonteCarloSettings:
    return MonteCarloSettings(grid=200)


def constant(
    spec: ProblemSpec, settings: MonteCarloSettings, value: float
) -> ControlPath:
    return ControlPath.constant(spec.time_grid(settings.grid), value, spec.box)


class TestCornerTargets:
    def test_sign_selects_corner(self, affine_spec: ProblemSpec) -> None:
        """High corner for c > 0, low for c < 0, midpoint on ties."""
        targets = corner_targets(np.array([[1.0], [-1.0], [0.0]]), affine_spec.box)
        np.testing.assert_array_equal(targets, [[2.0], [1.0], [1.5]])


class TestImprove:
    """Tests for the conditional-gradient loop."""

    def test_optimum_stops_immediately(
        self, affine_spec: ProblemSpec, coarse: MonteCarloSettings
    ) -> None:
        start = constant(affine_spec, coarse, 1.0)
        control, trace = improve(affine_spec, start, coarse)
        assert trace.reason == SMP_SATISFIED
        assert len(trace.iterates) == 1
        assert trace.report is not None and trace.report.certified
        np.testing.assert_array_equal(control.values, 1.0)

    def test_descends_from_upper_corner(
        self, affine_spec: ProblemSpec, coarse: MonteCarloSettings
    ) -> None:
        """From u = 2 (J = 2 ln 1.5) the loop reaches J near ln 2."""
        _, trace = improve(affine_spec, constant(affine_spec, coarse, 2.0), coarse)
        costs = [iterate.cost for iterate in trace.iterates]
        assert costs[0] == pytest.approx(2.0 * math.log(1.5), abs=1e-2)
        assert costs[-1] == pytest.approx(math.log(2.0), abs=1e-2)
        assert all(later <= earlier for earlier, later in zip(costs, costs[1:]))
        assert trace.iterates[1].step == 1.0

    def test_costs_never_increase(
        self, toy_spec: ProblemSpec, coarse: MonteCarloSettings
    ) -> None:
        _, trace = improve(
            toy_spec,
            constant(toy_spec, coarse, 1.0),
            coarse,
            armijo=ArmijoSettings(max_iters=5),
        )
        costs = [iterate.cost for iterate in trace.iterates]
        assert len(costs) >= 2
        assert costs[-1] < costs[0]
        assert all(later <= earlier for earlier, later in zip(costs, costs[1:]))

    def test_max_iters_zero(
        self, affine_spec: ProblemSpec, coarse: MonteCarloSettings
    ) -> None:
        initial = constant(affine_spec, coarse, 2.0)
        control, trace = improve(affine_spec, initial, coarse, max_iters=0)
        assert trace.reason == MAX_ITERS
        assert control is initial
        assert trace.to_dict()["iterations"] == 0
        assert trace.rows()[0][:2] == [0, trace.iterates[0].cost]

    def test_degenerate_stops(
        self, flat_spec: ProblemSpec, euler_settings: MonteCarloSettings
    ) -> None:
        initial = flat_spec.reference(flat_spec.time_grid(euler_settings.grid))
        control, trace = improve(flat_spec, initial, euler_settings)
        assert trace.reason == DEGENERATE_ENCOUNTERED
        assert control is initial
        assert trace.iterates[0].violation is None
        assert trace.rows()[0][4] == ""


class TestDPOracle:
    """Tests for the fixed-horizon Bellman recursion."""

    def test_quadratic_toy(self) -> None:
        """min ∫u² + (X(1) - 1)² over constant speeds: u = 1/2, J = 1/2."""
        spec = register_builtin(
            "toy-linear-deterministic", terminal_weight=1.0, terminal_target=1.0
        )
        result = dp_oracle(spec, spec.time_grid(50))
        assert result.cost == pytest.approx(0.5, abs=1e-3)
        np.testing.assert_allclose(result.control.values, 0.5, atol=0.011)
        assert result.values.shape == (51, result.states.size)

    def test_rejects_noise(self, sde_spec: ProblemSpec) -> None:
        with pytest.raises(ConfigError):
            dp_oracle(sde_spec, sde_spec.time_grid(10))
