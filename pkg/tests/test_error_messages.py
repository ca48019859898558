"""Tests for the DiagnosticMessages class and the error hierarchy."""

import pytest

from src.error_messages import DiagnosticMessages
from src.errors import (
    BoxViolationError,
    ConfigError,
    DegenerateRateError,
    DiscontinuityError,
    RegistryError,
    SimulationError,
    ToolkitError,
)


class TestProblemMessages:
    """Tests for problem-definition messages."""

    def test_unknown_builtin_lists_valid_names(self) -> None:
        """Unknown builtin message lists every registered name."""
        msg = DiagnosticMessages.unknown_builtin("nope", ["b-two", "a-one"])
        assert "🚫 UNKNOWN PROBLEM" in msg
        assert "'nope'" in msg
        assert "a-one, b-two" in msg
        assert "How to fix" in msg

    def test_alpha_not_above_start(self) -> None:
        """Trivial-problem message shows alpha and Phi(x0)."""
        msg = DiagnosticMessages.alpha_not_above_start(0.0, 0.5)
        assert "TRIVIAL PROBLEM" in msg
        assert "0.0" in msg
        assert "0.5" in msg

    def test_unknown_config_key(self) -> None:
        """Config key message carries the dotted path and allowed keys."""
        msg = DiagnosticMessages.unknown_config_key(
            "monte_carlo.gird", ["seed", "grid"]
        )
        assert "'monte_carlo.gird'" in msg
        assert "grid, seed" in msg


class TestNumericalMessages:
    """Tests for numerical failure messages."""

    def test_box_violation(self) -> None:
        """Box message names cell, coordinate, value and bounds."""
        msg = DiagnosticMessages.box_violation(3, 0, 2.5, 1.0, 2.0)
        assert "u[3][0] = 2.5" in msg
        assert "[1.0, 2.0]" in msg

    def test_grid_mismatch(self) -> None:
        """Grid message shows both step counts."""
        msg = DiagnosticMessages.grid_mismatch(100, 50)
        assert "N = 100" in msg
        assert "N = 50" in msg

    def test_nonfinite_state(self) -> None:
        """Overflow message names path and node."""
        msg = DiagnosticMessages.nonfinite_state(4, 17, 0.17)
        assert "path 4" in msg
        assert "node 17" in msg

    def test_degenerate_rate(self) -> None:
        """Degenerate message reports |h(tau)| and the threshold."""
        msg = DiagnosticMessages.degenerate_rate(1.0, -0.001, 0.006)
        assert "DEGENERATE RATE" in msg
        assert "0.001" in msg
        assert "0.006" in msg

    def test_discontinuous_rate(self) -> None:
        msg = DiagnosticMessages.discontinuous_rate(1.0, 0.5, 0.0)
        assert "DISCONTINUOUS RATE" in msg
        assert "jump 0.5" in msg

    def test_ill_conditioned_suggests_path_count(self) -> None:
        """Regression message suggests 10x the basis size."""
        msg = DiagnosticMessages.ill_conditioned(20, 3)
        assert "M = 20" in msg
        assert "at least 30 paths" in msg

    def test_degenerate_candidate_is_advisory(self) -> None:
        """Degenerate candidate message is a warning, not a block."""
        msg = DiagnosticMessages.degenerate_candidate(1.0, ["degenerate_h"])
        assert msg.startswith("⚠️")
        assert "degenerate_h" in msg


class TestErrorHierarchy:
    """Tests for exit codes and key paths on errors."""

    @pytest.mark.parametrize(
        "error_cls,exit_code",
        [
            (ConfigError, 2),
            (RegistryError, 2),
            (DegenerateRateError, 1),
            (DiscontinuityError, 1),
        ],
    )
    def test_exit_codes(self, error_cls: type[ToolkitError], exit_code: int) -> None:
        """Config errors exit 2, numerical failures exit 1."""
        assert error_cls("boom").exit_code == exit_code

    def test_box_violation_key_path(self) -> None:
        """BoxViolationError records the offending cell and coordinate."""
        error = BoxViolationError("out", cell=5, coordinate=1)
        assert error.key_path == "control[5][1]"
        assert error.exit_code == 1

    def test_simulation_error_key_path(self) -> None:
        error = SimulationError("overflow", path=2, node=9)
        assert error.key_path == "X[2][9]"
        assert (error.path, error.node) == (2, 9)

    def test_original_error_is_kept(self) -> None:
        """Wrapped exceptions stay reachable."""
        cause = ValueError("bad")
        error = ConfigError("wrapped", key_path="x", original_error=cause)
        assert error.original_error is cause
        assert isinstance(error, ToolkitError)
