"""Maximum-principle verifier with the terminal-time penalty terms.

For a candidate ū the pointwise inequality is

    LHS(t_i, u) = E[H_u - kappa * 𝓗_u](t_i) · (u - ū_i) <= 0

on every cell before tau and every probe u of a lattice over the control box,
where kappa = (Psi-tilde + E f(tau)) / h(tau). In case III kappa is 0 and
the check reduces to the classical convex-box condition. Case II evaluates
both branches and certifies when either holds.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .adjoint import (
    AdjointPath,
    hamiltonian_gradient_curve,
    solve_adjoint,
    solve_appendix_adjoint,
)
from .config import MonteCarloSettings, PenaltyMode, VerificationSettings
from .error_messages import DiagnosticMessages
from .errors import ConfigError, ContractError
from .forward import (
    Case,
    MeanCurve,
    PathEnsemble,
    RateCurve,
    TerminalTimeResult,
    integrate_to_tau,
    simulate_with_settings,
    terminal_time,
)
from .grid import ControlPath
from .problem import FloatArray, ProblemSpec
from .variation import (
    CostEstimate,
    PenaltyCoefficients,
    cost_functional,
    hbar_samples,
    penalty_coefficients,
    propagate_variations,
)


logger = logging.getLogger(__name__)

CERTIFIED = "certified"
REFUTED = "refuted"
DEGENERATE = "degenerate"

PENALIZED = "penalized"
UNPENALIZED = "unpenalized"

# Multiple of the standard error subtracted from each probe before comparing with tol.
SE_MULTIPLIER = 3.0


# ============================================================================
# Shared pipeline state
# ============================================================================


@dataclass(frozen=True, eq=False)
class CandidateAnalysis:
    """Everything the verifier and the optimizer need about one control.

    ``h_u`` and ``second_h_u`` are per-path gradients (M, K, k) on the cells
    before tau. ``penalty_density`` replaces -𝓗_u by the directly computed
    ∫h̄ per unit time in direct penalty mode.
    """

    spec: ProblemSpec
    control: ControlPath
    ensemble: PathEnsemble
    mean: MeanCurve
    rate: RateCurve
    ttr: TerminalTimeResult
    cost: CostEstimate
    adjoint: AdjointPath
    h_u: FloatArray
    penalties: PenaltyCoefficients | None = None
    second_adjoint: AdjointPath | None = None
    second_h_u: FloatArray | None = None
    penalty_density: FloatArray | None = None

    @property
    def cells(self) -> int:
        return self.ttr.truncated.cells

    @property
    def degenerate(self) -> bool:
        return self.ttr.needs_rate_hypotheses and bool(self.ttr.flags())

    def branches(self) -> list[str]:
        if self.ttr.case is Case.I:
            return [PENALIZED]
        if self.ttr.case is Case.II:
            return [PENALIZED, UNPENALIZED]
        return [UNPENALIZED]

    def coefficient_samples(self, branch: str) -> FloatArray:
        """Per-path c = H_u - kappa*𝓗_u, (M, K, k)."""
        if branch == UNPENALIZED or self.penalties is None:
            return self.h_u
        kappa = self.penalties.kappa
        if self.penalty_density is not None:
            return self.h_u + kappa * self.penalty_density[None]
        if self.second_h_u is None:
            raise ContractError(
                "🚫 CONTRACT ERROR: penalized coefficients need either the second "
                "adjoint gradient or the direct penalty density",
                key_path="second_h_u",
            )
        return self.h_u - kappa * self.second_h_u

    def coefficients(self, branch: str) -> tuple[FloatArray, FloatArray]:
        """Mean coefficient c_i and its standard error, each (K, k)."""
        samples = self.coefficient_samples(branch)
        count = samples.shape[0]
        if self.ensemble.deterministic or count < 2:
            return samples.mean(axis=0), np.zeros(samples.shape[1:])
        return samples.mean(axis=0), samples.std(axis=0, ddof=1) / math.sqrt(count)

    def directional_gain(self, direction: FloatArray, branch: str) -> float:
        """Σ_i w_i c_i·v_i over cells before tau; equals minus the cost derivative."""
        c, _ = self.coefficients(branch)
        widths = self.ttr.truncated.widths
        return float(np.einsum("i,ik,ik->", widths, c, direction[: self.cells]))


def _direct_penalty_density(
    spec: ProblemSpec, ensemble: PathEnsemble, ttr: TerminalTimeResult
) -> FloatArray:
    """∫_0^tau h̄(e_{i,a}) dt / w_i for every unit single-cell direction, (K, k)."""
    if not ensemble.deterministic:
        raise ConfigError(
            "🚫 CONFIG ERROR: penalty_mode 'direct' needs a noise-free problem",
            key_path="verification.penalty_mode",
        )
    single = dataclasses.replace(
        ensemble,
        states=ensemble.states[:1],
        increments=None if ensemble.increments is None else ensemble.increments[:1],
    )
    cells, k, steps = ttr.truncated.cells, spec.control_dim, ensemble.grid.steps
    directions = np.zeros((cells * k, steps, k))
    for index in range(cells * k):
        cell, coordinate = divmod(index, k)
        directions[index, cell, coordinate] = 1.0
    y = propagate_variations(spec, single, directions)
    right, left = hbar_samples(spec, single, y, directions)
    integral = integrate_to_tau(right[0, :, :-1], left[0, :, 1:], ttr, ensemble.scheme)
    widths = np.repeat(ttr.truncated.widths, k)
    density = np.divide(integral, widths, out=np.zeros_like(integral), where=widths > 0)
    return density.reshape(cells, k)


def analyze_candidate(
    spec: ProblemSpec,
    control: ControlPath,
    monte_carlo: MonteCarloSettings,
    verification: VerificationSettings | None = None,
) -> CandidateAnalysis:
    """Simulate, locate tau, solve both adjoints and collect Hamiltonian gradients."""
    verification = verification or VerificationSettings()
    ensemble = simulate_with_settings(spec, control, monte_carlo)
    mean, rate, ttr = terminal_time(spec, ensemble, verification.case_tol)
    cost = cost_functional(spec, ensemble, ttr)
    adjoint = solve_adjoint(spec, ensemble, ttr, verification.adjoint_mode)
    h_u = hamiltonian_gradient_curve(spec, ensemble, adjoint).gradient
    analysis = CandidateAnalysis(
        spec=spec,
        control=control,
        ensemble=ensemble,
        mean=mean,
        rate=rate,
        ttr=ttr,
        cost=cost,
        adjoint=adjoint,
        h_u=h_u,
    )
    if ttr.case is Case.III or analysis.degenerate:
        return analysis

    penalties = penalty_coefficients(spec, ensemble, ttr)
    if verification.penalty_mode is PenaltyMode.DIRECT:
        return dataclasses.replace(
            analysis,
            penalties=penalties,
            penalty_density=_direct_penalty_density(spec, ensemble, ttr),
        )
    second = solve_appendix_adjoint(spec, ensemble, ttr, verification.adjoint_mode)
    return dataclasses.replace(
        analysis,
        penalties=penalties,
        second_adjoint=second,
        second_h_u=hamiltonian_gradient_curve(spec, ensemble, second).gradient,
    )


# ============================================================================
# Reports
# ============================================================================


@dataclass(frozen=True, eq=False)
class BranchReport:
    """Probe table for one branch: lhs and score (lhs - 3 se) are (K, L)."""

    name: str
    lhs: FloatArray
    score: FloatArray
    max_violation: float
    worst_cell: int
    worst_probe: int
    certified: bool

    def to_dict(self, times: FloatArray, probes: FloatArray) -> dict[str, Any]:
        return {
            "name": self.name,
            "max_violation": self.max_violation,
            "certified": self.certified,
            "worst_t": float(times[self.worst_cell]),
            "worst_u": probes[self.worst_probe].tolist(),
        }


@dataclass(frozen=True, eq=False)
class SMPReport:
    """Verdict of the pointwise inequality over (t_i, u) probes."""

    case: Case
    verdict: str
    tau: float
    tol: float
    max_violation: float | None
    times: FloatArray
    probes: FloatArray
    branches: list[BranchReport] = field(default_factory=list)
    penalties: dict[str, float] = field(default_factory=dict)
    message: str | None = None

    @property
    def certified(self) -> bool:
        return self.verdict == CERTIFIED

    @property
    def selected(self) -> BranchReport | None:
        """The branch with the smallest violation."""
        if not self.branches:
            return None
        return min(self.branches, key=lambda branch: branch.max_violation)

    def worst_probe(self) -> tuple[float, list[float]] | None:
        branch = self.selected
        if branch is None:
            return None
        probe = self.probes[branch.worst_probe].tolist()
        return float(self.times[branch.worst_cell]), probe

    def probe_rows(self) -> list[list[float]]:
        """Rows ``t, u_1..u_k, lhs`` of the selected branch."""
        branch = self.selected
        if branch is None:
            return []
        return [
            [float(t), *self.probes[j].tolist(), float(branch.lhs[i, j])]
            for i, t in enumerate(self.times)
            for j in range(self.probes.shape[0])
        ]

    def to_dict(self) -> dict[str, Any]:
        worst = self.worst_probe()
        return {
            "case": self.case.value,
            "verdict": self.verdict,
            "tau": self.tau,
            "tol": self.tol,
            "max_violation": self.max_violation,
            "worst_probe": {"t": worst[0], "u": worst[1]} if worst else None,
            "penalties": self.penalties,
            "branches": [b.to_dict(self.times, self.probes) for b in self.branches],
            "message": self.message,
        }


def _branch_report(
    analysis: CandidateAnalysis, branch: str, probes: FloatArray, tol: float
) -> BranchReport:
    c, se = analysis.coefficients(branch)
    offsets = probes[None, :, :] - analysis.control.values[: analysis.cells, None, :]
    lhs = np.einsum("ik,ijk->ij", c, offsets)
    spread = np.sqrt(np.einsum("ik,ijk->ij", se**2, offsets**2))
    score = lhs - SE_MULTIPLIER * spread
    worst_cell, worst_probe = np.unravel_index(int(np.argmax(score)), score.shape)
    max_violation = float(score[worst_cell, worst_probe])
    return BranchReport(
        name=branch,
        lhs=lhs,
        score=score,
        max_violation=max_violation,
        worst_cell=int(worst_cell),
        worst_probe=int(worst_probe),
        certified=max_violation <= tol,
    )


def _penalty_breakdown(analysis: CandidateAnalysis) -> dict[str, float]:
    penalties = analysis.penalties
    if penalties is None:
        return {}
    return {
        "psi_tilde": penalties.psi_tilde,
        "f_at_tau": penalties.f_at_tau,
        "h_at_tau": penalties.h_at_tau,
        "kappa_psi": penalties.kappa_psi,
        "kappa_f": penalties.kappa_f,
    }


def verify_analysis(
    analysis: CandidateAnalysis, verification: VerificationSettings | None = None
) -> SMPReport:
    """Evaluate the inequality for an analysed candidate."""
    verification = verification or VerificationSettings()
    ttr = analysis.ttr
    times = ttr.grid.nodes[: analysis.cells]
    probes = analysis.spec.box.lattice(verification.probes)
    if analysis.degenerate:
        message = DiagnosticMessages.degenerate_candidate(ttr.tau, ttr.flags())
        logger.warning("candidate is degenerate at tau=%.6f: %s", ttr.tau, ttr.flags())
        return SMPReport(
            case=ttr.case,
            verdict=DEGENERATE,
            tau=ttr.tau,
            tol=verification.tol,
            max_violation=None,
            times=times,
            probes=probes,
            message=message,
        )

    branches = [
        _branch_report(analysis, name, probes, verification.tol)
        for name in analysis.branches()
    ]
    max_violation = min(branch.max_violation for branch in branches)
    verdict = CERTIFIED if max_violation <= verification.tol else REFUTED
    logger.info(
        "SMP %s (case %s): max violation %.3e", verdict, ttr.case.value, max_violation
    )
    return SMPReport(
        case=ttr.case,
        verdict=verdict,
        tau=ttr.tau,
        tol=verification.tol,
        max_violation=max_violation,
        times=times,
        probes=probes,
        branches=branches,
        penalties=_penalty_breakdown(analysis),
    )


def verify(
    spec: ProblemSpec,
    control: ControlPath,
    monte_carlo: MonteCarloSettings,
    verification: VerificationSettings | None = None,
) -> SMPReport:
    """Certify or refute a candidate control.

    Raises:
        BoxViolationError: The candidate leaves the control box
    """
    verification = verification or VerificationSettings()
    analysis = analyze_candidate(spec, control, monte_carlo, verification)
    return verify_analysis(analysis, verification)
