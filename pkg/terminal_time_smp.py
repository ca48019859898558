#!/usr/bin/env python3

"""Terminal-time optimal control experiments from the command line.

Every subcommand writes CSV/JSON artifacts to the output directory and prints
a short summary. Exit codes: 0 success, 1 numerical or verification failure,
2 usage or configuration error.
"""

import argparse
import dataclasses
import sys
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from dotenv import load_dotenv
from rich.console import Console
from rich.table import Table

from src import __version__
from src.adjoint import (
    basis_size,
    duality_check,
    max2_dual_check,
    solve_adjoint,
    solve_appendix_adjoint,
)
from src.config import (
    ExperimentConfig,
    ProblemSelection,
    Scheme,
    default_output_dir,
    load_experiment_config,
)
from src.errors import (
    ConfigError,
    DegenerateRateError,
    DiscontinuityError,
    ToolkitError,
)
from src.forward import (
    PathEnsemble,
    ensemble_summary,
    mean_phi,
    mean_rate_crosscheck,
    simulate_with_settings,
    terminal_time,
)
from src.grid import ControlPath, TimeGrid
from src.ledger import RunLedger, get_ledger, init_ledger
from src.logging_utils import (
    configure_logging,
    numbered_header,
    write_csv,
    write_json,
)
from src.optimizer import SMP_SATISFIED, improve
from src.problem import ProblemSpec
from src.registry import available_families, build_problem
from src.reproduce import EXAMPLES, reproduce_all
from src.smp import verify
from src.tracing import get_tracing_manager, initialize_tracing
from src.variation import (
    classical_directional_derivative,
    cost_derivative_fd,
    cost_directional_derivative,
    defect_ratios,
    hbar,
    match_branches,
    tau_derivative,
    tau_derivative_fd,
    taylor_expansion_check,
    variational_paths,
)


COMMANDS = (
    "simulate",
    "tau",
    "h-curve",
    "derivative-check",
    "tau-derivative",
    "verify-smp",
    "optimize",
    "duality-check",
    "reproduce",
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


# ============================================================================
# Arguments
# ============================================================================


def _common_flags() -> argparse.ArgumentParser:
    """Flags accepted by every subcommand."""
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument(
        "--config", type=str, help="Experiment JSON file", metavar="PATH"
    )
    parser.add_argument(
        "--out",
        type=str,
        help="Output directory (default: $TERMINAL_TIME_OUTPUT_DIR or ./results)",
        metavar="DIR",
    )
    parser.add_argument("--seed", type=int, help="Random seed", metavar="N")
    parser.add_argument(
        "--threads",
        type=int,
        help="Worker threads (results do not depend on it)",
        metavar="N",
    )
    parser.add_argument("--grid", type=int, help="Grid size N (>= 10)", metavar="N")
    parser.add_argument(
        "--paths", type=int, help="Monte Carlo paths M (>= 1)", metavar="M"
    )
    parser.add_argument(
        "--scheme",
        type=str,
        choices=[scheme.value for scheme in Scheme],
        help="Time stepping (rk4 requires a noise-free problem)",
    )
    parser.add_argument(
        "--problem", type=str, help="Builtin problem or family name", metavar="NAME"
    )
    parser.add_argument(
        "--control",
        type=str,
        help="'reference', a constant, or comma-separated constants per coordinate",
        metavar="VALUE",
    )
    parser.add_argument(
        "--direction",
        type=str,
        help="Constant direction v, or comma-separated constants",
        metavar="VALUE",
    )
    parser.add_argument(
        "--rho-list",
        type=str,
        help="Comma-separated perturbation sizes",
        metavar="LIST",
    )
    parser.add_argument(
        "--probes", type=int, help="Probe points per control coordinate"
    )
    parser.add_argument("--tol", type=float, help="Verifier tolerance")
    parser.add_argument(
        "--example",
        type=str,
        default="all",
        choices=["all", *EXAMPLES],
        help="Reproduction group to run (reproduce only)",
    )
    parser.add_argument(
        "--log-level",
        type=str,
        help="Logging level (default: $LOG_LEVEL or WARNING)",
        metavar="LEVEL",
    )
    parser.add_argument(
        "--ledger",
        type=str,
        help="Write a JSONL run ledger to this directory",
        metavar="DIR",
    )
    return parser


def parse_arguments(argv: Sequence[str] | None = None) -> argparse.Namespace:
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(
        prog="terminal-time-smp",
        description="Stochastic optimal control with a mean-constraint terminal time",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    subparsers = parser.add_subparsers(
        dest="command", metavar="COMMAND", required=True
    )
    common = _common_flags()
    helps = {
        "simulate": "Simulate paths; write ensemble.csv and mean.csv",
        "tau": "Estimate tau and its case; write tau.json",
        "h-curve": "Write the rate curve h.csv",
        "derivative-check": "Taylor check of y and cost derivative vs quotients",
        "tau-derivative": "Directional rate, tau derivative and its quotient table",
        "verify-smp": "Certify or refute a candidate against the maximum principle",
        "optimize": "Improve a control by conditional-gradient descent",
        "duality-check": "Adjoints and both duality identities",
        "reproduce": "Reproduce the worked example, counterexamples and oracles",
    }
    for command in COMMANDS:
        subparsers.add_parser(command, parents=[common], help=helps[command])
    return parser.parse_args(argv)


def _floats(text: str, flag: str) -> list[float]:
    try:
        values = [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise ConfigError(
            f"🚫 CONFIG ERROR: {flag} expects comma-separated numbers, got {text!r}",
            key_path=flag,
        )
    if not values:
        raise ConfigError(f"🚫 CONFIG ERROR: {flag} is empty", key_path=flag)
    return values


def _control_flag(text: str, flag: str) -> float | list[float]:
    values = _floats(text, flag)
    return values[0] if len(values) == 1 else values


def _selection(name: str) -> ProblemSelection:
    if name in available_families():
        return ProblemSelection(name=name, family=True)
    return ProblemSelection.from_value(name)


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Experiment config from --config with command-line overrides applied.

    Raises:
        ConfigError: Invalid file, flag value or resulting setting
    """
    config = ExperimentConfig()
    if args.config:
        config = load_experiment_config(Path(args.config))

    if args.problem:
        config.problem = _selection(args.problem)
    if args.control is not None:
        config.control = (
            "reference"
            if args.control == "reference"
            else _control_flag(args.control, "--control")
        )
    if args.direction is not None:
        config.direction = _control_flag(args.direction, "--direction")
    if args.rho_list is not None:
        rhos = _floats(args.rho_list, "--rho-list")
        if any(rho == 0.0 for rho in rhos):
            raise ConfigError(
                "🚫 CONFIG ERROR: --rho-list entries must be non-zero",
                key_path="--rho-list",
            )
        config.rho_list = tuple(rhos)

    monte_carlo = {
        "grid": args.grid,
        "paths": args.paths,
        "seed": args.seed,
        "threads": args.threads,
        "scheme": Scheme(args.scheme) if args.scheme else None,
    }
    config.monte_carlo = dataclasses.replace(
        config.monte_carlo, **{k: v for k, v in monte_carlo.items() if v is not None}
    )
    verification = {"probes": args.probes, "tol": args.tol}
    config.verification = dataclasses.replace(
        config.verification, **{k: v for k, v in verification.items() if v is not None}
    )
    return config


# ============================================================================
# Run context
# ============================================================================


@dataclass
class RunContext:
    """What a subcommand needs: its config, output directory and ledger."""

    command: str
    config: ExperimentConfig
    output_dir: Path
    ledger: RunLedger
    example: str = "all"
    written: list[Path] = field(default_factory=list)

    def write_csv(self, name: str, header: Sequence[str], rows: Any) -> Path:
        path = write_csv(self.output_dir / name, header, rows)
        self.record(path)
        return path

    def write_json(self, name: str, data: dict[str, Any]) -> Path:
        path = write_json(self.output_dir / name, data)
        self.record(path)
        return path

    def record(self, path: Path) -> None:
        self.written.append(path)
        self.ledger.log_artifact(self.command, path)

    def problem(self) -> tuple[ProblemSpec, TimeGrid]:
        selection = self.config.problem
        spec = build_problem(selection.name, selection.family, selection.params)
        return spec, spec.time_grid(self.config.monte_carlo.grid)

    def control(self, spec: ProblemSpec, grid: TimeGrid) -> ControlPath:
        value = self.config.control
        if value == "reference":
            return spec.reference(grid)
        return ControlPath.constant(grid, value, spec.box)

    def direction(self, grid: TimeGrid) -> ControlPath:
        return ControlPath.constant(grid, self.config.direction)

    def simulate(self, spec: ProblemSpec, grid: TimeGrid) -> PathEnsemble:
        """Paths under the configured control."""
        return simulate_with_settings(
            spec, self.control(spec, grid), self.config.monte_carlo
        )


def _header(title: str) -> None:
    print("=" * 60)
    print(title)
    print("=" * 60)


def _u_header(control_dim: int) -> list[str]:
    return ["u"] if control_dim == 1 else numbered_header("u", control_dim)


# ============================================================================
# Subcommands
# ============================================================================


def cmd_simulate(context: RunContext) -> int:
    spec, grid = context.problem()
    ensemble = context.simulate(spec, grid)
    mean = mean_phi(ensemble, spec)
    m = spec.state_dim
    context.write_csv(
        "ensemble.csv",
        ["t", *numbered_header("mean", m), *numbered_header("std", m)],
        ensemble_summary(ensemble),
    )
    context.write_csv("mean.csv", ["t", "m", "se"], mean.rows())
    _header(f"🎲 simulate: {spec.name}")
    scheme = ensemble.scheme.value
    print(f"✅ {ensemble.path_count} paths, N = {grid.steps}, scheme {scheme}")
    print(f"   E[Phi(X(T))] = {mean.values[-1]:.6g} (se {mean.se[-1]:.2g})")
    return EXIT_OK


def cmd_tau(context: RunContext) -> int:
    spec, grid = context.problem()
    ensemble = context.simulate(spec, grid)
    case_tol = context.config.verification.case_tol
    mean, rate, ttr = terminal_time(spec, ensemble, case_tol)
    context.write_csv("mean.csv", ["t", "m", "se"], mean.rows())
    context.write_csv("h.csv", ["t", "h", "se"], rate.rows())
    context.write_json(
        "tau.json",
        {
            "problem": spec.name,
            **ttr.to_dict(),
            "mean_rate_defect": mean_rate_crosscheck(mean, rate, spec),
        },
    )
    _header(f"⏱️ tau: {spec.name}")
    print(f"✅ tau = {ttr.tau:.6f} (case {ttr.case.value})")
    print(f"   h(tau) = {ttr.h_at_tau:.6g}")
    for flag in ttr.flags():
        print(f"⚠️ {flag}")
    context.ledger.log_stage(
        context.command, "hitting_time", tau=ttr.tau, case=ttr.case.value
    )
    return EXIT_OK


def cmd_h_curve(context: RunContext) -> int:
    spec, grid = context.problem()
    ensemble = context.simulate(spec, grid)
    _, rate, _ = terminal_time(spec, ensemble, context.config.verification.case_tol)
    context.write_csv("h.csv", ["t", "h", "se"], rate.rows())
    _header(f"📈 h-curve: {spec.name}")
    print(f"✅ h(0) = {rate.right[0]:.6g}, h(T) = {rate.left[-1]:.6g}")
    return EXIT_OK


def cmd_derivative_check(context: RunContext) -> int:
    config = context.config
    spec, grid = context.problem()
    ensemble = context.simulate(spec, grid)
    direction = context.direction(grid)
    variational = variational_paths(spec, ensemble, direction)
    defects = taylor_expansion_check(
        spec, ensemble, direction, config.rho_list, variational
    )
    ratios = defect_ratios(defects)
    context.write_csv("taylor.csv", ["rho", "defect"], defects)

    _, _, ttr = terminal_time(spec, ensemble, config.verification.case_tol)
    variation = cost_directional_derivative(spec, ensemble, direction, ttr)
    classical = classical_directional_derivative(spec, ensemble, direction, ttr)
    quotients = cost_derivative_fd(
        spec, ensemble, direction, config.rho_list, ttr.case_tol
    )
    context.write_csv("cost_variation.csv", ["component", "value"], variation.rows())
    context.write_csv("cost_quotients.csv", ["rho", "quotient"], quotients.csv_rows())
    context.write_json(
        "derivative_check.json",
        {
            "problem": spec.name,
            "taylor": [{"rho": rho, "defect": defect} for rho, defect in defects],
            "taylor_ratios": ratios,
            "cost_variation": variation.to_dict(),
            "classical_derivative": classical.total,
            "quotients": quotients.to_dict(),
            "branch_match": (
                match_branches(variation, quotients) if variation.ambiguous else None
            ),
        },
    )
    _header(f"🔬 derivative-check: {spec.name}")
    print(f"✅ Taylor defects: {', '.join(f'{d:.3g}' for _, d in defects)}")
    print(f"   dJ = {variation.total:.6g} (case {variation.case.value})")
    for sign, label in ((1, "rho > 0"), (-1, "rho < 0")):
        limit = quotients.limit(sign)
        if limit is not None:
            print(f"   quotient limit {label}: {limit:.6g}")
    return EXIT_OK


def cmd_tau_derivative(context: RunContext) -> int:
    config = context.config
    spec, grid = context.problem()
    ensemble = context.simulate(spec, grid)
    _, _, ttr = terminal_time(spec, ensemble, config.verification.case_tol)
    direction = context.direction(grid)
    curve = hbar(spec, ensemble, variational_paths(spec, ensemble, direction))
    context.write_csv("hbar.csv", ["t", "hbar", "se"], curve.rows())
    table = tau_derivative_fd(spec, ensemble, direction, config.rho_list, ttr.case_tol)
    context.write_csv("tau_quotients.csv", ["rho", "quotient"], table.csv_rows())

    result: dict[str, Any] = {
        "problem": spec.name,
        "terminal_time": ttr.to_dict(),
        "quotients": table.to_dict(),
    }
    _header(f"📐 tau-derivative: {spec.name}")
    code = EXIT_OK
    try:
        derivative = tau_derivative(spec, ttr, curve)
        result["derivative"] = derivative.to_dict()
        print(f"✅ dtau = {derivative.value:.6g} (case {derivative.case.value})")
        if derivative.candidates is not None:
            print(f"   case II candidates: {derivative.candidates}")
    except (DegenerateRateError, DiscontinuityError) as e:
        result["error"] = {"type": type(e).__name__, "message": str(e)}
        print(f"❌ {type(e).__name__}: the tau derivative does not exist")
        code = EXIT_FAILURE
    for sign, label in ((1, "rho > 0"), (-1, "rho < 0")):
        limit = table.limit(sign)
        if limit is not None:
            print(f"   quotient limit {label}: {limit:.6g}")
    context.write_json("tau_derivative.json", result)
    return code


def cmd_verify_smp(context: RunContext) -> int:
    config = context.config
    spec, grid = context.problem()
    report = verify(
        spec, context.control(spec, grid), config.monte_carlo, config.verification
    )
    context.write_json("smp_report.json", {"problem": spec.name, **report.to_dict()})
    context.write_csv(
        "smp_probes.csv",
        ["t", *_u_header(spec.control_dim), "lhs"],
        report.probe_rows(),
    )
    context.ledger.log_verdict(context.command, report.verdict, report.max_violation)

    _header(f"🧭 verify-smp: {spec.name}")
    table = Table(title=f"tau = {report.tau:.6f} (case {report.case.value})")
    table.add_column("branch")
    table.add_column("max violation", justify="right")
    table.add_column("certified", justify="center")
    for branch in report.branches:
        status = "✅" if branch.certified else "❌"
        table.add_row(branch.name, f"{branch.max_violation:.3e}", status)
    Console().print(table)
    if report.certified:
        print(f"✅ certified (tol {report.tol:g})")
        return EXIT_OK
    print(f"❌ {report.verdict}")
    if report.message:
        print(report.message)
    return EXIT_FAILURE


def cmd_optimize(context: RunContext) -> int:
    config = context.config
    spec, grid = context.problem()
    control, trace = improve(
        spec,
        context.control(spec, grid),
        config.monte_carlo,
        config.verification,
        config.optimizer,
    )
    context.write_csv(
        "trace.csv", ["iter", "J", "tau", "case", "violation", "step"], trace.rows()
    )
    context.write_csv(
        "control.csv",
        ["t", *numbered_header("u", spec.control_dim)],
        [
            [float(t), *control.values[i].tolist()]
            for i, t in enumerate(grid.nodes[:-1])
        ],
    )
    context.write_json("optimize.json", {"problem": spec.name, **trace.to_dict()})
    if trace.report is not None:
        report = trace.report
        context.ledger.log_verdict(
            context.command, report.verdict, report.max_violation
        )

    _header(f"🚀 optimize: {spec.name}")
    final = trace.iterates[-1]
    iterations = len(trace.iterates) - 1
    print(f"   {iterations} iterations, J = {final.cost:.8g}, tau = {final.tau:.6f}")
    if trace.reason == SMP_SATISFIED:
        print("✅ smp-satisfied")
        return EXIT_OK
    print(f"❌ stopped: {trace.reason}")
    return EXIT_FAILURE


def cmd_duality_check(context: RunContext) -> int:
    config = context.config
    spec, grid = context.problem()
    ensemble = context.simulate(spec, grid)
    _, _, ttr = terminal_time(spec, ensemble, config.verification.case_tol)
    mode = config.verification.adjoint_mode
    adjoint = solve_adjoint(spec, ensemble, ttr, mode)
    second = solve_appendix_adjoint(spec, ensemble, ttr, mode)
    variational = variational_paths(spec, ensemble, context.direction(grid))
    duality = duality_check(spec, ensemble, ttr, adjoint, variational)
    max2 = max2_dual_check(spec, ensemble, ttr, second, variational)

    m, d = spec.state_dim, spec.noise_dim
    if adjoint.coefficients:
        basis = basis_size(m)
        context.write_csv(
            "adjoint_coefficients.csv",
            ["step", "target", *[f"coef_{index}" for index in range(basis)]],
            adjoint.coefficient_rows(),
        )
    else:
        q_header = [f"q_{a}{j}" for a in range(1, m + 1) for j in range(1, d + 1)]
        context.write_csv(
            "adjoint.csv", ["t", *numbered_header("p", m), *q_header], adjoint.rows()
        )
    context.write_json(
        "duality.json",
        {
            "problem": spec.name,
            "tau": ttr.tau,
            "case": ttr.case.value,
            "mode": adjoint.mode.value,
            "duality": duality.to_dict(),
            "max2": max2.to_dict(),
        },
    )
    _header(f"🔁 duality-check: {spec.name}")
    print(f"✅ adjoint duality defect {duality.defect:.3e} (se {duality.se:.2g})")
    print(f"✅ h-bar dual form defect {max2.defect:.3e} (se {max2.se:.2g})")
    return EXIT_OK


def cmd_reproduce(context: RunContext) -> int:
    settings = context.config.monte_carlo
    summary = reproduce_all(
        context.output_dir,
        grid=settings.grid,
        seed=settings.seed,
        threads=settings.threads,
        example=context.example,
    )
    context.record(context.output_dir / "reproduce.json")
    failures = summary.failures()
    if not failures:
        print(f"✅ all {len(summary.rows)} checks passed")
        return EXIT_OK
    print(f"❌ {len(failures)} of {len(summary.rows)} checks failed")
    return EXIT_FAILURE


HANDLERS: dict[str, Callable[[RunContext], int]] = {
    "simulate": cmd_simulate,
    "tau": cmd_tau,
    "h-curve": cmd_h_curve,
    "derivative-check": cmd_derivative_check,
    "tau-derivative": cmd_tau_derivative,
    "verify-smp": cmd_verify_smp,
    "optimize": cmd_optimize,
    "duality-check": cmd_duality_check,
    "reproduce": cmd_reproduce,
}


# ============================================================================
# Entry points
# ============================================================================


def _output_dir(args: argparse.Namespace, config: ExperimentConfig) -> Path:
    if args.out:
        return Path(args.out)
    if config.output_dir:
        return Path(config.output_dir)
    return default_output_dir()


def _ledger(args: argparse.Namespace, config: ExperimentConfig) -> RunLedger:
    if args.ledger:
        return init_ledger(args.ledger)
    if config.ledger is not None and config.ledger.enabled:
        return init_ledger(config.ledger.log_dir)
    return get_ledger()


def run(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand and return its exit code."""
    try:
        args = parse_arguments(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    configure_logging(args.log_level)
    ledger = get_ledger()
    try:
        config = build_config(args)
        initialize_tracing(config.tracing)
        ledger = _ledger(args, config)
        ledger.log_run_start(args.command, config.to_dict())
        context = RunContext(
            command=args.command,
            config=config,
            output_dir=_output_dir(args, config),
            ledger=ledger,
            example=args.example,
        )
        with get_tracing_manager().stage(
            args.command,
            problem=config.problem.name,
            grid=config.monte_carlo.grid,
            seed=config.monte_carlo.seed,
        ) as stage:
            code = HANDLERS[args.command](context)
            stage.record(exit_code=code)
    except ToolkitError as e:
        print(str(e), file=sys.stderr)
        if e.key_path:
            print(f"   at: {e.key_path}", file=sys.stderr)
        code = e.exit_code
    for record in get_tracing_manager().drain():
        ledger.log_stage(
            args.command,
            record.name,
            duration_ms=round(record.duration_ms, 3),
            error=record.error,
        )
    ledger.log_run_end(args.command, code)
    return code


def main() -> None:
    """Console entry point."""
    load_dotenv()
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
