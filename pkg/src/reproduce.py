"""One-command reproduction of the worked example, both counterexamples and the
oracle checks.

Every check becomes a ReproductionRow with the expected value, the observed
value and a pass flag. ``reproduce.json`` holds the rows and the settings that
determine them; the thread count is left out because results do not depend
on it.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from rich.console import Console
from rich.table import Table

from .adjoint import (
    duality_check,
    max2_dual_check,
    solve_adjoint,
    solve_appendix_adjoint,
)
from .config import (
    DEFAULT_GRID,
    DEFAULT_RHO_LIST,
    DEFAULT_SEED,
    MonteCarloSettings,
    Scheme,
    VerificationSettings,
)
from .errors import ConfigError, DegenerateRateError, DiscontinuityError, ToolkitError
from .forward import simulate_with_settings, terminal_time
from .grid import ControlPath
from .logging_utils import write_json
from .optimizer import SMP_SATISFIED, dp_oracle, improve
from .registry import build_family, register_builtin
from .smp import CERTIFIED, REFUTED, SMPReport, verify
from .tracing import get_tracing_manager
from .variation import (
    cost_derivative_fd,
    cost_directional_derivative,
    defect_ratios,
    hbar,
    replicated_cost_check,
    tau_derivative,
    tau_derivative_fd,
    taylor_expansion_check,
    variational_paths,
)


logger = logging.getLogger(__name__)

AFFINE = "affine"
KINK = "kink"
FLAT = "flat"
ORACLES = "oracles"
EXAMPLES = (AFFINE, KINK, FLAT, ORACLES)

LN2 = math.log(2.0)

# Tolerances
TAU_TOL = 1e-3
H_TOL = 5e-3
ADJOINT_TOL = 1e-10
SMP_TOL = 1e-6
DERIVATIVE_TOL = 5e-3
CONTROL_TOL = 1e-2
KINK_TAU_TOL = 2e-3
QUOTIENT_RTOL = 0.05
ORACLE_TOL = 1e-3
DUALITY_TOL = 1e-4
TAYLOR_RATIO = 0.6

KINK_RHOS = (0.1, -0.1, 0.01, -0.01)
FLAT_RHOS = (0.1, -0.1, 0.01, -0.01, 0.001, -0.001)
NEGATIVE_GROWTH = 10.0
POSITIVE_GROWTH = 3.0
GROWTH_SLACK = 1e-6

# The Bellman oracle sweeps a state lattice per step; it runs on a coarser grid.
DP_GRID = 100

# Replicated stochastic cost-derivative check
SDE_CHECK_GRID = 200
SDE_CHECK_PATHS = 10_000
SDE_REPLICATES = 10
SDE_RHOS = (0.1, 0.05)
COST_RTOL = 0.02


@dataclass(frozen=True)
class ReproductionRow:
    """One reproduced quantity with its expectation."""

    group: str
    check: str
    expected: str
    observed: Any
    passed: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "group": self.group,
            "check": self.check,
            "expected": self.expected,
            "observed": self.observed,
            "passed": self.passed,
        }

    def observed_text(self) -> str:
        if isinstance(self.observed, float):
            return f"{self.observed:.6g}"
        return str(self.observed)


@dataclass
class ReproductionSummary:
    grid: int
    seed: int
    examples: tuple[str, ...]
    rows: list[ReproductionRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.rows) and all(row.passed for row in self.rows)

    def failures(self) -> list[ReproductionRow]:
        return [row for row in self.rows if not row.passed]

    def to_dict(self) -> dict[str, Any]:
        return {
            "settings": {
                "grid": self.grid,
                "seed": self.seed,
                "examples": list(self.examples),
            },
            "passed": self.passed,
            "rows": [row.to_dict() for row in self.rows],
        }


# ============================================================================
# Row builders
# ============================================================================


def _close(
    group: str, check: str, observed: float, expected: float, tol: float
) -> ReproductionRow:
    passed = math.isfinite(observed) and abs(observed - expected) <= tol
    return ReproductionRow(
        group, check, f"{expected:.6g} ± {tol:g}", float(observed), passed
    )


def _at_least(
    group: str, check: str, observed: float, minimum: float
) -> ReproductionRow:
    passed = observed >= minimum * (1.0 - GROWTH_SLACK)
    return ReproductionRow(group, check, f">= {minimum:g}", float(observed), passed)


def _at_most(
    group: str, check: str, observed: float, maximum: float
) -> ReproductionRow:
    return ReproductionRow(
        group, check, f"<= {maximum:g}", float(observed), observed <= maximum
    )


def _equals(group: str, check: str, observed: Any, expected: Any) -> ReproductionRow:
    return ReproductionRow(group, check, str(expected), observed, observed == expected)


def _verdict(
    group: str, check: str, report: SMPReport, expected: str
) -> ReproductionRow:
    violation = "n/a" if report.max_violation is None else f"{report.max_violation:.3g}"
    return ReproductionRow(
        group,
        check,
        expected,
        f"{report.verdict} (max violation {violation})",
        report.verdict == expected,
    )


def _raises(
    group: str, check: str, call: Callable[[], object], error: type[ToolkitError]
) -> ReproductionRow:
    try:
        call()
    except error:
        return ReproductionRow(group, check, error.__name__, error.__name__, True)
    except ToolkitError as e:
        return ReproductionRow(group, check, error.__name__, type(e).__name__, False)
    return ReproductionRow(group, check, error.__name__, "no error", False)


def _settings(
    grid: int, seed: int, threads: int, scheme: Scheme = Scheme.EULER
) -> MonteCarloSettings:
    return MonteCarloSettings(grid=grid, seed=seed, threads=threads, scheme=scheme)


def _min_growth(quotients: Sequence[tuple[float, float]]) -> float:
    """Smallest |q| ratio between consecutive decades of |rho| (largest |rho| first)."""
    ordered = sorted(quotients, key=lambda row: -abs(row[0]))
    ratios = [
        abs(small[1]) / abs(big[1])
        for big, small in zip(ordered, ordered[1:], strict=False)
        if big[1] != 0.0
    ]
    return min(ratios) if ratios else 0.0


# ============================================================================
# Groups
# ============================================================================


def affine_rows(grid: int, seed: int, threads: int) -> list[ReproductionRow]:
    """Worked example: u = 1 is optimal with tau = ln 2 and h(tau) = 2."""
    spec = register_builtin("example-affine")
    time_grid = spec.time_grid(grid)
    candidate = ControlPath.constant(time_grid, 1.0, spec.box)
    ensemble = simulate_with_settings(spec, candidate, _settings(grid, seed, threads))
    _, _, ttr = terminal_time(spec, ensemble)
    adjoint = solve_adjoint(spec, ensemble, ttr)
    direction = ControlPath.constant(time_grid, 1.0)
    derivative = cost_directional_derivative(spec, ensemble, direction, ttr)
    max_p = float(np.max(np.abs(adjoint.p)))
    rows = [
        _close(AFFINE, "tau", ttr.tau, LN2, TAU_TOL),
        _close(AFFINE, "h(tau)", ttr.h_at_tau, 2.0, H_TOL),
        _close(AFFINE, "max |p|", max_p, 0.0, ADJOINT_TOL),
        _close(AFFINE, "dJ(u=1; v=1)", derivative.total, LN2 - 0.5, DERIVATIVE_TOL),
    ]

    rk4 = _settings(grid, seed, threads, Scheme.RK4)
    strict = VerificationSettings(tol=SMP_TOL)
    at_one = verify(spec, candidate, rk4, strict)
    rows.append(_verdict(AFFINE, "SMP at u=1", at_one, CERTIFIED))
    start = ControlPath.constant(time_grid, 2.0, spec.box)
    at_two = verify(spec, start, rk4, strict)
    rows.append(_verdict(AFFINE, "SMP at u=2", at_two, REFUTED))

    control, trace = improve(spec, start, rk4, strict)
    final_tau = trace.iterates[-1].tau
    active = max(1, math.ceil(final_tau / time_grid.dt - 1e-9))
    sup_error = float(np.max(np.abs(control.values[:active] - 1.0)))
    rows.extend(
        [
            _equals(AFFINE, "optimizer from u=2: reason", trace.reason, SMP_SATISFIED),
            _close(
                AFFINE,
                "optimizer from u=2: sup |u-1| on [0,tau]",
                sup_error,
                0.0,
                CONTROL_TOL,
            ),
            _close(AFFINE, "optimizer from u=2: tau", final_tau, LN2, TAU_TOL),
        ]
    )
    return rows


def _kink_tau(rho: float) -> float:
    return 1.0 / (1.0 + rho) if rho > 0 else 0.5 / (0.5 + rho)


def kink_rows(grid: int, seed: int, threads: int) -> list[ReproductionRow]:
    """The rate jumps at tau = 1: one-sided quotients tend to 1 and 2."""
    spec = register_builtin("example-kink")
    time_grid = spec.time_grid(grid)
    ensemble = simulate_with_settings(
        spec, spec.reference(time_grid), _settings(grid, seed, threads)
    )
    _, _, ttr = terminal_time(spec, ensemble)
    direction = ControlPath.constant(time_grid, 1.0)
    table = tau_derivative_fd(spec, ensemble, direction, KINK_RHOS)
    worst = max(abs(row.value - _kink_tau(row.rho)) for row in table.rows)
    positive = float(table.limit(1) or math.nan)
    negative = float(table.limit(-1) or math.nan)
    curve = hbar(spec, ensemble, variational_paths(spec, ensemble, direction))
    return [
        _close(KINK, "tau", ttr.tau, 1.0, KINK_TAU_TOL),
        _equals(KINK, "h_discontinuous", ttr.h_discontinuous, True),
        _close(KINK, "max |tau_rho - closed form|", worst, 0.0, KINK_TAU_TOL),
        _close(KINK, "quotient limit rho>0", positive, 1.0, QUOTIENT_RTOL),
        _close(KINK, "quotient limit rho<0", negative, 2.0, 2.0 * QUOTIENT_RTOL),
        _raises(
            KINK,
            "tau_derivative",
            lambda: tau_derivative(spec, ttr, curve),
            DiscontinuityError,
        ),
    ]


def flat_rows(grid: int, seed: int, threads: int) -> list[ReproductionRow]:
    """The rate vanishes at tau = 1: quotients blow up as rho -> 0."""
    spec = register_builtin("example-flat")
    time_grid = spec.time_grid(grid)
    ensemble = simulate_with_settings(
        spec, spec.reference(time_grid), _settings(grid, seed, threads)
    )
    _, _, ttr = terminal_time(spec, ensemble)
    direction = ControlPath.constant(time_grid, 1.0)
    table = tau_derivative_fd(spec, ensemble, direction, FLAT_RHOS)
    curve = hbar(spec, ensemble, variational_paths(spec, ensemble, direction))
    return [
        _close(FLAT, "tau", ttr.tau, 1.0, TAU_TOL),
        _equals(FLAT, "degenerate_h", ttr.degenerate_h, True),
        _at_least(
            FLAT,
            "|quotient| growth per decade, rho<0",
            _min_growth([(r.rho, r.quotient) for r in table.side(-1)]),
            NEGATIVE_GROWTH,
        ),
        _at_least(
            FLAT,
            "|quotient| growth per decade, rho>0",
            _min_growth([(r.rho, r.quotient) for r in table.side(1)]),
            POSITIVE_GROWTH,
        ),
        _raises(
            FLAT,
            "tau_derivative",
            lambda: tau_derivative(spec, ttr, curve),
            DegenerateRateError,
        ),
    ]


def oracle_rows(grid: int, seed: int, threads: int) -> list[ReproductionRow]:
    """Closed-form and finite-difference oracles on the toy problems."""
    settings = _settings(grid, seed, threads)
    rows: list[ReproductionRow] = []

    toy = register_builtin("toy-linear-deterministic")
    toy_grid = toy.time_grid(grid)
    ensemble = simulate_with_settings(
        toy, ControlPath.constant(toy_grid, 1.0, toy.box), settings
    )
    _, _, ttr = terminal_time(toy, ensemble)
    direction = ControlPath.constant(toy_grid, 1.0)
    curve = hbar(toy, ensemble, variational_paths(toy, ensemble, direction))
    analytic = tau_derivative(toy, ttr, curve).value
    quotients = tau_derivative_fd(toy, ensemble, direction, DEFAULT_RHO_LIST)
    tau_limit = float(quotients.limit(1) or math.nan)
    cost = cost_directional_derivative(toy, ensemble, direction, ttr).total
    cost_fd = cost_derivative_fd(toy, ensemble, direction, DEFAULT_RHO_LIST)
    cost_limit = float(cost_fd.limit(1) or math.nan)
    rows.extend(
        [
            _close(
                ORACLES, "toy-det dtau (closed form 0.5)", analytic, 0.5, ORACLE_TOL
            ),
            _close(
                ORACLES,
                "toy-det dtau vs quotient limit",
                analytic,
                tau_limit,
                ORACLE_TOL,
            ),
            _close(
                ORACLES, "toy-det dJ vs quotient limit", cost, cost_limit, ORACLE_TOL
            ),
        ]
    )

    affine = register_builtin("example-affine")
    affine_grid = affine.time_grid(grid)
    base = simulate_with_settings(
        affine, ControlPath.constant(affine_grid, 1.0, affine.box), settings
    )
    _, _, affine_ttr = terminal_time(affine, base)
    variational = variational_paths(
        affine, base, ControlPath.constant(affine_grid, 1.0)
    )
    second = solve_appendix_adjoint(affine, base, affine_ttr)
    max2 = max2_dual_check(affine, base, affine_ttr, second, variational)
    rows.append(
        _at_most(
            ORACLES,
            "affine dual form of the h-bar integral: defect",
            max2.defect,
            DUALITY_TOL,
        )
    )

    weighted = register_builtin("toy-linear-deterministic", terminal_weight=1.0)
    weighted_base = simulate_with_settings(
        weighted, ControlPath.constant(toy_grid, 1.0, weighted.box), settings
    )
    _, _, weighted_ttr = terminal_time(weighted, weighted_base)
    weighted_y = variational_paths(weighted, weighted_base, direction)
    duality = duality_check(
        weighted,
        weighted_base,
        weighted_ttr,
        solve_adjoint(weighted, weighted_base, weighted_ttr),
        weighted_y,
    )
    rows.append(
        _at_most(
            ORACLES, "toy-det (Psi = x^2) duality defect", duality.defect, DUALITY_TOL
        )
    )

    polynomial = build_family("scalar-polynomial")
    polynomial_grid = polynomial.time_grid(grid)
    polynomial_base = simulate_with_settings(
        polynomial, polynomial.reference(polynomial_grid), settings
    )
    defects = taylor_expansion_check(
        polynomial,
        polynomial_base,
        ControlPath.constant(polynomial_grid, 1.0),
        DEFAULT_RHO_LIST,
    )
    worst_ratio = max(defect_ratios(defects), default=0.0)
    rows.append(
        _at_most(ORACLES, "polynomial Taylor defect ratio", worst_ratio, TAYLOR_RATIO)
    )

    fixed = register_builtin(
        "toy-linear-deterministic", alpha=5.0, terminal_weight=1.0, terminal_target=1.0
    )
    dp_grid = fixed.time_grid(min(grid, DP_GRID))
    control, trace = improve(
        fixed,
        ControlPath.constant(dp_grid, 1.0, fixed.box),
        _settings(dp_grid.steps, seed, threads),
        VerificationSettings(tol=SMP_TOL),
    )
    oracle = dp_oracle(fixed, dp_grid)
    rows.extend(
        [
            _equals(ORACLES, "case III optimizer reason", trace.reason, SMP_SATISFIED),
            _close(
                ORACLES,
                "case III J vs Bellman oracle",
                trace.iterates[-1].cost,
                oracle.cost,
                ORACLE_TOL,
            ),
        ]
    )

    sde = register_builtin("toy-linear-sde")
    sde_grid = sde.time_grid(grid)
    sde_base = simulate_with_settings(sde, sde.reference(sde_grid), settings)
    mean, _, sde_ttr = terminal_time(sde, sde_base)
    se = float(mean.se[min(sde_ttr.cell + 1, sde_grid.steps)])
    # E X(t) = theta*u*t = 0.5t, so tau = 0.5 up to the Monte Carlo error of m
    tau_tol = max(ORACLE_TOL, 4.0 * se / 0.5)
    rows.append(_close(ORACLES, "toy-sde tau", sde_ttr.tau, 0.5, tau_tol))

    check_grid = sde.time_grid(min(grid, SDE_CHECK_GRID))
    replicated = replicated_cost_check(
        sde,
        sde.reference(check_grid),
        ControlPath.constant(check_grid, 1.0),
        MonteCarloSettings(
            grid=check_grid.steps, paths=SDE_CHECK_PATHS, seed=seed, threads=threads
        ),
        SDE_RHOS,
        SDE_REPLICATES,
    )
    rows.append(
        _close(
            ORACLES,
            "toy-sde dJ vs quotient limit (common random numbers)",
            replicated.analytic,
            replicated.quotient,
            replicated.tolerance(COST_RTOL),
        )
    )
    return rows


GROUPS: dict[str, Callable[[int, int, int], list[ReproductionRow]]] = {
    AFFINE: affine_rows,
    KINK: kink_rows,
    FLAT: flat_rows,
    ORACLES: oracle_rows,
}


def _failed_group(group: str, error: ToolkitError) -> ReproductionRow:
    message = str(error).splitlines()[0] if str(error) else ""
    observed = f"{type(error).__name__}: {message}"
    return ReproductionRow(group, "run", "completes", observed, False)


def summary_table(summary: ReproductionSummary) -> Table:
    table = Table(title=f"Reproduction (N={summary.grid}, seed={summary.seed})")
    table.add_column("group")
    table.add_column("check")
    table.add_column("expected")
    table.add_column("observed")
    table.add_column("status", justify="center")
    for row in summary.rows:
        status = "✅" if row.passed else "❌"
        table.add_row(
            row.group, row.check, row.expected, row.observed_text(), status
        )
    return table


def reproduce_all(
    output_dir: Path,
    grid: int = DEFAULT_GRID,
    seed: int = DEFAULT_SEED,
    threads: int = 1,
    example: str = "all",
    console: Console | None = None,
) -> ReproductionSummary:
    """Run the selected reproduction groups, print the table, write reproduce.json.

    Args:
        output_dir: Directory for reproduce.json
        grid: Grid size N for every group
        seed: Seed for the stochastic rows
        threads: Worker threads for path simulation
        example: One of EXAMPLES or "all"

    Raises:
        ConfigError: Unknown example or invalid grid
    """
    if example != "all" and example not in GROUPS:
        raise ConfigError(
            f"🚫 CONFIG ERROR: unknown example '{example}', expected one of: "
            f"all, {', '.join(EXAMPLES)}",
            key_path="example",
        )
    # Validates N before any group runs
    MonteCarloSettings(grid=grid, seed=seed, threads=threads)
    selected = EXAMPLES if example == "all" else (example,)
    summary = ReproductionSummary(grid=grid, seed=seed, examples=selected)
    tracing = get_tracing_manager()

    for group in selected:
        with tracing.stage(f"reproduce.{group}", grid=grid) as stage:
            try:
                rows = GROUPS[group](grid, seed, threads)
            except ToolkitError as e:
                logger.error("reproduction group %s failed: %s", group, e)
                rows = [_failed_group(group, e)]
            stage.record(passed=all(row.passed for row in rows))
        summary.rows.extend(rows)
        for row in rows:
            if not row.passed:
                logger.warning(
                    "%s / %s: expected %s, observed %s",
                    row.group,
                    row.check,
                    row.expected,
                    row.observed_text(),
                )

    (console or Console()).print(summary_table(summary))
    write_json(output_dir / "reproduce.json", summary.to_dict())
    return summary
