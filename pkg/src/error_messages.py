"""Actionable diagnostic messages for toolkit errors.

This module provides consistent messages that explain:
1. What failed
2. Why it failed (the numbers that triggered it)
3. How to fix it

Blocking conditions start with 🚫, advisory ones with ⚠️.
"""

from collections.abc import Sequence


class DiagnosticMessages:
    """Factory for toolkit diagnostic messages."""

    @staticmethod
    def unknown_builtin(name: str, valid: Sequence[str]) -> str:
        """Generate error message for an unknown builtin or family.

        Args:
            name: The name that was requested
            valid: Registered names

        Returns:
            Formatted error message with fix suggestions
        """
        listing = ", ".join(sorted(valid))
        return (
            f"🚫 UNKNOWN PROBLEM: '{name}'\n\n"
            f"Valid names: {listing}\n\n"
            f"💡 How to fix:\n"
            f"  • Pick one of the registered names above\n"
            f"  • For a custom problem use {{\"family\": ..., \"params\": ...}}"
        )

    @staticmethod
    def alpha_not_above_start(alpha: float, phi_x0: float) -> str:
        """Generate error message when the threshold is already met at t = 0.

        Args:
            alpha: Constraint threshold
            phi_x0: Constraint value at the initial state

        Returns:
            Formatted error message
        """
        return (
            f"🚫 TRIVIAL PROBLEM: alpha = {alpha!r} <= Phi(x0) = {phi_x0!r}\n\n"
            "The terminal time would be 0 for every control.\n\n"
            "💡 How to fix:\n"
            "  • Raise alpha above Phi(x0)\n"
            "  • Or move x0 so that Phi(x0) < alpha"
        )

    @staticmethod
    def box_violation(
        cell: int, coordinate: int, value: float, low: float, high: float
    ) -> str:
        """Generate error message for a control value outside the box.

        Args:
            cell: Grid cell index
            coordinate: Control coordinate index
            value: Offending value
            low: Lower bound of the coordinate
            high: Upper bound of the coordinate

        Returns:
            Formatted error message
        """
        return (
            f"🚫 BOX VIOLATION: u[{cell}][{coordinate}] = {value!r} "
            f"outside [{low!r}, {high!r}]\n\n"
            "💡 How to fix:\n"
            "  • Shrink the perturbation size rho\n"
            "  • Choose a direction that keeps u + rho*v inside the control box"
        )

    @staticmethod
    def grid_mismatch(expected: int, actual: int) -> str:
        """Generate error message for objects living on different grids.

        Args:
            expected: Step count of the reference grid
            actual: Step count of the offending object

        Returns:
            Formatted error message
        """
        return (
            f"🚫 GRID MISMATCH: expected N = {expected}, got N = {actual}\n\n"
            "💡 How to fix:\n"
            "  • Build controls and directions on the simulation grid\n"
            "  • Resample with ControlPath.from_function(grid, fn, box)"
        )

    @staticmethod
    def nonfinite_state(path: int, node: int, time: float) -> str:
        """Generate error message for a state overflow.

        Args:
            path: First path index with a non-finite state
            node: First node index with a non-finite state
            time: Time of that node

        Returns:
            Formatted error message
        """
        return (
            f"🚫 SIMULATION FAILED: non-finite state at path {path}, "
            f"node {node} (t = {time!r})\n\n"
            "💡 How to fix:\n"
            "  • Increase the grid size N to stabilise the Euler recursion\n"
            "  • Check drift and diffusion for super-linear growth"
        )

    @staticmethod
    def degenerate_rate(tau: float, h_at_tau: float, threshold: float) -> str:
        """Generate error message when h vanishes at tau.

        Args:
            tau: Estimated terminal time
            h_at_tau: Rate of the mean constraint at tau
            threshold: Degeneracy threshold in force

        Returns:
            Formatted error message
        """
        return (
            f"🚫 DEGENERATE RATE: |h(tau)| = {abs(h_at_tau)!r} < {threshold!r} "
            f"at tau = {tau!r}\n\n"
            "The terminal-time derivative requires a non-vanishing rate at tau; "
            "the one-sided difference quotients diverge here.\n\n"
            "💡 How to fix:\n"
            "  • Inspect `tau-derivative` quotient tables instead of the formula\n"
            "  • Change the candidate so the mean curve crosses alpha transversally"
        )

    @staticmethod
    def discontinuous_rate(tau: float, jump: float, threshold: float) -> str:
        """Generate error message when h jumps at tau.

        Args:
            tau: Estimated terminal time
            jump: Window-mean jump statistic
            threshold: Jump threshold in force

        Returns:
            Formatted error message
        """
        return (
            f"🚫 DISCONTINUOUS RATE: jump {jump!r} > {threshold!r} "
            f"around tau = {tau!r}\n\n"
            "Left and right difference quotients of tau disagree here.\n\n"
            "💡 How to fix:\n"
            "  • Inspect the signed quotient table from `tau-derivative`\n"
            "  • Smooth the candidate control near tau"
        )

    @staticmethod
    def ill_conditioned(paths: int, basis_size: int) -> str:
        """Generate error message for an underdetermined regression.

        Args:
            paths: Number of Monte Carlo paths
            basis_size: Number of regression basis functions

        Returns:
            Formatted error message
        """
        return (
            f"🚫 ILL-CONDITIONED REGRESSION: M = {paths} < "
            f"10 x {basis_size} basis functions\n\n"
            "💡 How to fix:\n"
            f"  • Use at least {10 * basis_size} paths (--paths)"
        )

    @staticmethod
    def unknown_config_key(key_path: str, allowed: Sequence[str]) -> str:
        """Generate error message for an unrecognised config key.

        Args:
            key_path: Dotted path of the offending key
            allowed: Keys accepted at that level

        Returns:
            Formatted error message
        """
        return (
            f"🚫 CONFIG ERROR: unknown key '{key_path}'\n\n"
            f"Allowed keys here: {', '.join(sorted(allowed))}\n\n"
            "💡 How to fix:\n"
            "  • Check the spelling of the key\n"
            "  • Remove keys that do not apply to this section"
        )

    @staticmethod
    def degenerate_candidate(tau: float, reasons: Sequence[str]) -> str:
        """Generate advisory message when the maximum principle does not apply.

        Args:
            tau: Estimated terminal time
            reasons: Flags raised by the forward engine

        Returns:
            Formatted warning message
        """
        return (
            f"⚠️ DEGENERATE CANDIDATE at tau = {tau!r}: {', '.join(reasons)}\n\n"
            "The maximum principle's hypotheses fail, so neither a certificate "
            "nor a refutation is meaningful."
        )
