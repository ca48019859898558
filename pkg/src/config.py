"""Configuration constants and settings for terminal-time experiments.

Experiment files are JSON. Parsing is strict: every section rejects keys it
does not know, and errors carry the dotted key path of the offending entry.
"""

import json
import os
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from .error_messages import DiagnosticMessages
from .errors import ConfigError, RegistryError


class Scheme(str, Enum):
    """Time-stepping schemes for the forward and backward solvers."""

    EULER = "euler"
    RK4 = "rk4"


class PenaltyMode(str, Enum):
    """How the verifier evaluates the terminal-time penalty terms."""

    ADJOINT = "adjoint"
    DIRECT = "direct"


class AdjointMode(str, Enum):
    """Backend selection for the backward solvers."""

    AUTO = "auto"
    DETERMINISTIC = "deterministic"
    REGRESSION = "regression"


# Grid and sampling defaults
DEFAULT_GRID = 2000
MIN_GRID = 10
DEFAULT_SEED = 20240611
DEFAULT_STOCHASTIC_PATHS = 10_000
BLOCK_SIZE = 1024

# Verification defaults
DEFAULT_PROBES = 5
DEFAULT_TOL = 1e-6
DEFAULT_RHO_LIST = (0.1, 0.05, 0.025, 0.0125)

# Environment
OUTPUT_DIR_ENV_VAR = "TERMINAL_TIME_OUTPUT_DIR"
LOG_LEVEL_ENV_VAR = "LOG_LEVEL"
DEFAULT_OUTPUT_DIR = "results"


def check_keys(data: Mapping[str, Any], allowed: set[str], prefix: str) -> None:
    """Reject keys outside ``allowed``.

    Args:
        data: Section being parsed
        allowed: Keys accepted in this section
        prefix: Dotted path of the section ("" for the top level)

    Raises:
        ConfigError: Naming the first unknown key in sorted order
    """
    if not isinstance(data, Mapping):
        raise ConfigError(
            f"🚫 CONFIG ERROR: section '{prefix or '<root>'}' must be an object",
            key_path=prefix or None,
        )
    unknown = sorted(set(data) - allowed)
    if unknown:
        key_path = f"{prefix}.{unknown[0]}" if prefix else unknown[0]
        raise ConfigError(
            DiagnosticMessages.unknown_config_key(key_path, sorted(allowed)),
            key_path=key_path,
        )


def _enum_value(enum_cls: type[Enum], value: Any, key_path: str) -> Any:
    try:
        return enum_cls(value)
    except ValueError:
        choices = ", ".join(str(member.value) for member in enum_cls)
        raise ConfigError(
            f"🚫 CONFIG ERROR: '{key_path}' = {value!r}, expected one of: {choices}",
            key_path=key_path,
        )


@dataclass
class MonteCarloSettings:
    """Grid and sampling settings.

    ``paths`` of None resolves to 1 for noise-free problems and to
    DEFAULT_STOCHASTIC_PATHS otherwise.
    """

    grid: int = DEFAULT_GRID
    paths: int | None = None
    seed: int = DEFAULT_SEED
    threads: int = 1
    scheme: Scheme = Scheme.EULER
    retain_increments: bool = True

    def __post_init__(self) -> None:
        if self.grid < MIN_GRID:
            raise ConfigError(
                f"🚫 CONFIG ERROR: grid N = {self.grid} < {MIN_GRID}",
                key_path="monte_carlo.grid",
            )
        if self.paths is not None and self.paths < 1:
            raise ConfigError(
                f"🚫 CONFIG ERROR: paths M = {self.paths} < 1",
                key_path="monte_carlo.paths",
            )
        if self.threads < 1:
            raise ConfigError(
                f"🚫 CONFIG ERROR: threads = {self.threads} < 1",
                key_path="monte_carlo.threads",
            )

    def resolve_paths(self, noise_free: bool) -> int:
        """Path count to simulate for a problem with or without noise."""
        if self.paths is not None:
            return self.paths
        return 1 if noise_free else DEFAULT_STOCHASTIC_PATHS

    @classmethod
    def from_dict(
        cls, data: dict[str, Any], prefix: str = "monte_carlo"
    ) -> "MonteCarloSettings":
        """Create MonteCarloSettings from dictionary."""
        check_keys(
            data,
            {"grid", "paths", "seed", "threads", "scheme", "retain_increments"},
            prefix,
        )
        return cls(
            grid=int(data.get("grid", DEFAULT_GRID)),
            paths=data.get("paths"),
            seed=int(data.get("seed", DEFAULT_SEED)),
            threads=int(data.get("threads", 1)),
            scheme=_enum_value(
                Scheme, data.get("scheme", Scheme.EULER.value), f"{prefix}.scheme"
            ),
            retain_increments=bool(data.get("retain_increments", True)),
        )

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary for serialization."""
        result: dict[str, Any] = {
            "grid": self.grid,
            "seed": self.seed,
            "threads": self.threads,
            "scheme": self.scheme.value,
            "retain_increments": self.retain_increments,
        }
        if self.paths is not None:
            result["paths"] = self.paths
        return result


@dataclass
class VerificationSettings:
    """Settings for the maximum-principle verifier."""

    probes: int = DEFAULT_PROBES
    tol: float = DEFAULT_TOL
    penalty_mode: PenaltyMode = PenaltyMode.ADJOINT
    adjoint_mode: AdjointMode = AdjointMode.AUTO
    case_tol: float | None = None

    def __post_init__(self) -> None:
        if self.probes < 2:
            raise ConfigError(
                f"🚫 CONFIG ERROR: probes = {self.probes} < 2 per coordinate",
                key_path="verification.probes",
            )
        if self.tol < 0:
            raise ConfigError(
                f"🚫 CONFIG ERROR: tol = {self.tol!r} must be non-negative",
                key_path="verification.tol",
            )
        if self.case_tol is not None and self.case_tol <= 0:
            raise ConfigError(
                f"🚫 CONFIG ERROR: case_tol = {self.case_tol!r} must be positive",
                key_path="verification.case_tol",
            )

    @classmethod
    def from_dict(
        cls, data: dict[str, Any], prefix: str = "verification"
    ) -> "VerificationSettings":
        """Create VerificationSettings from dictionary."""
        check_keys(
            data, {"probes", "tol", "penalty_mode", "adjoint_mode", "case_tol"}, prefix
        )
        return cls(
            probes=int(data.get("probes", DEFAULT_PROBES)),
            tol=float(data.get("tol", DEFAULT_TOL)),
            penalty_mode=_enum_value(
                PenaltyMode,
                data.get("penalty_mode", PenaltyMode.ADJOINT.value),
                f"{prefix}.penalty_mode",
            ),
            adjoint_mode=_enum_value(
                AdjointMode,
                data.get("adjoint_mode", AdjointMode.AUTO.value),
                f"{prefix}.adjoint_mode",
            ),
            case_tol=data.get("case_tol"),
        )

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary for serialization."""
        result: dict[str, Any] = {
            "probes": self.probes,
            "tol": self.tol,
            "penalty_mode": self.penalty_mode.value,
            "adjoint_mode": self.adjoint_mode.value,
        }
        if self.case_tol is not None:
            result["case_tol"] = self.case_tol
        return result


@dataclass
class ArmijoSettings:
    """Backtracking line-search settings for the descent loop."""

    initial_step: float = 1.0
    shrink: float = 0.5
    slope: float = 1e-4
    step_floor: float = 1e-8
    max_iters: int = 50

    def __post_init__(self) -> None:
        if not 0.0 < self.shrink < 1.0:
            raise ConfigError(
                f"🚫 CONFIG ERROR: shrink = {self.shrink!r} must lie in (0, 1)",
                key_path="optimizer.shrink",
            )
        if not 0.0 < self.initial_step <= 1.0:
            raise ConfigError(
                f"🚫 CONFIG ERROR: initial_step = {self.initial_step!r} "
                "must lie in (0, 1]",
                key_path="optimizer.initial_step",
            )
        if self.max_iters < 0:
            raise ConfigError(
                f"🚫 CONFIG ERROR: max_iters = {self.max_iters} < 0",
                key_path="optimizer.max_iters",
            )

    @classmethod
    def from_dict(
        cls, data: dict[str, Any], prefix: str = "optimizer"
    ) -> "ArmijoSettings":
        """Create ArmijoSettings from dictionary."""
        check_keys(
            data, {"initial_step", "shrink", "slope", "step_floor", "max_iters"}, prefix
        )
        return cls(
            initial_step=float(data.get("initial_step", 1.0)),
            shrink=float(data.get("shrink", 0.5)),
            slope=float(data.get("slope", 1e-4)),
            step_floor=float(data.get("step_floor", 1e-8)),
            max_iters=int(data.get("max_iters", 50)),
        )

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary for serialization."""
        return {
            "initial_step": self.initial_step,
            "shrink": self.shrink,
            "slope": self.slope,
            "step_floor": self.step_floor,
            "max_iters": self.max_iters,
        }


@dataclass
class TracingSettings:
    """OpenTelemetry tracing configuration settings."""

    enabled: bool = False
    service_name: str = "terminal-time-smp"
    exporter: str = "console"  # "console", "otlp", or "none"
    otlp_endpoint: str | None = None

    @classmethod
    def from_dict(
        cls, data: dict[str, Any], prefix: str = "tracing"
    ) -> "TracingSettings":
        """Create TracingSettings from dictionary."""
        check_keys(
            data, {"enabled", "service_name", "exporter", "otlp_endpoint"}, prefix
        )
        return cls(
            enabled=data.get("enabled", False),
            service_name=data.get("service_name", "terminal-time-smp"),
            exporter=data.get("exporter", "console"),
            otlp_endpoint=data.get("otlp_endpoint"),
        )

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary for serialization."""
        result: dict[str, Any] = {
            "enabled": self.enabled,
            "service_name": self.service_name,
            "exporter": self.exporter,
        }
        if self.otlp_endpoint:
            result["otlp_endpoint"] = self.otlp_endpoint
        return result


@dataclass
class LedgerSettings:
    """Run-ledger settings (JSONL event log, off by default)."""

    enabled: bool = False
    log_dir: str = "logs"

    @classmethod
    def from_dict(
        cls, data: dict[str, Any], prefix: str = "ledger"
    ) -> "LedgerSettings":
        """Create LedgerSettings from dictionary."""
        check_keys(data, {"enabled", "log_dir"}, prefix)
        return cls(
            enabled=bool(data.get("enabled", False)),
            log_dir=str(data.get("log_dir", "logs")),
        )

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary for serialization."""
        return {"enabled": self.enabled, "log_dir": self.log_dir}


@dataclass
class ProblemSelection:
    """Which problem to build: a registered builtin or a parameterized family."""

    name: str = "example-affine"
    family: bool = False
    params: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_value(cls, value: Any, prefix: str = "problem") -> "ProblemSelection":
        """Parse a builtin name or a ``{"builtin"|"family": ..., "params": ...}``.

        Raises:
            ConfigError: On malformed input
            RegistryError: When the name is not registered
        """
        # Deferred: the registry imports problem data that imports this module.
        from .registry import available_builtins, available_families

        if isinstance(value, str):
            selection = cls(name=value)
        else:
            check_keys(value, {"builtin", "family", "params"}, prefix)
            if ("builtin" in value) == ("family" in value):
                raise ConfigError(
                    f"🚫 CONFIG ERROR: '{prefix}' needs exactly one of "
                    "'builtin' or 'family'",
                    key_path=prefix,
                )
            params = value.get("params", {})
            if not isinstance(params, dict):
                raise ConfigError(
                    f"🚫 CONFIG ERROR: '{prefix}.params' must be an object",
                    key_path=f"{prefix}.params",
                )
            if "builtin" in value:
                selection = cls(name=value["builtin"], params=dict(params))
            else:
                selection = cls(name=value["family"], family=True, params=dict(params))

        registered = available_families() if selection.family else available_builtins()
        if selection.name not in registered:
            raise RegistryError(
                DiagnosticMessages.unknown_builtin(selection.name, registered),
                key_path=prefix,
            )
        return selection

    def to_value(self) -> Any:
        """Convert back to the config-file representation."""
        if not self.family and not self.params:
            return self.name
        key = "family" if self.family else "builtin"
        return {key: self.name, "params": dict(self.params)}


ControlValue = str | float | list[float]


def _parse_control_value(value: Any, key_path: str, allow_reference: bool) -> Any:
    if allow_reference and value == "reference":
        return value
    if isinstance(value, bool):
        raise ConfigError(
            f"🚫 CONFIG ERROR: '{key_path}' must be a number or list",
            key_path=key_path,
        )
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, list) and value and all(
        isinstance(item, (int, float)) and not isinstance(item, bool) for item in value
    ):
        return [float(item) for item in value]
    expected = "a number or a list"
    if allow_reference:
        expected = "'reference', " + expected
    raise ConfigError(
        f"🚫 CONFIG ERROR: '{key_path}' = {value!r}, expected {expected}",
        key_path=key_path,
    )


@dataclass
class ExperimentConfig:
    """A complete experiment: problem, candidate control, numerics and outputs."""

    problem: ProblemSelection = field(default_factory=ProblemSelection)
    control: ControlValue = "reference"
    direction: float | list[float] = 1.0
    rho_list: tuple[float, ...] = DEFAULT_RHO_LIST
    monte_carlo: MonteCarloSettings = field(default_factory=MonteCarloSettings)
    verification: VerificationSettings = field(default_factory=VerificationSettings)
    optimizer: ArmijoSettings = field(default_factory=ArmijoSettings)
    tracing: TracingSettings | None = None
    ledger: LedgerSettings | None = None
    output_dir: str | None = None

    ALLOWED_KEYS = frozenset(
        {
            "problem",
            "control",
            "direction",
            "rho_list",
            "monte_carlo",
            "verification",
            "optimizer",
            "tracing",
            "ledger",
            "output_dir",
        }
    )

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        """Create ExperimentConfig from dictionary."""
        check_keys(data, set(cls.ALLOWED_KEYS), "")

        rho_list = data.get("rho_list", list(DEFAULT_RHO_LIST))
        if not isinstance(rho_list, list) or not rho_list:
            raise ConfigError(
                "🚫 CONFIG ERROR: 'rho_list' must be a non-empty list",
                key_path="rho_list",
            )
        for index, rho in enumerate(rho_list):
            if isinstance(rho, bool) or not isinstance(rho, (int, float)) or rho == 0:
                raise ConfigError(
                    f"🚫 CONFIG ERROR: 'rho_list[{index}]' = {rho!r} "
                    "must be a non-zero number",
                    key_path=f"rho_list[{index}]",
                )

        tracing_config = data.get("tracing")
        ledger_config = data.get("ledger")
        output_dir = data.get("output_dir")

        return cls(
            problem=ProblemSelection.from_value(data.get("problem", "example-affine")),
            control=_parse_control_value(
                data.get("control", "reference"), "control", allow_reference=True
            ),
            direction=_parse_control_value(
                data.get("direction", 1.0), "direction", allow_reference=False
            ),
            rho_list=tuple(float(rho) for rho in rho_list),
            monte_carlo=MonteCarloSettings.from_dict(data.get("monte_carlo", {})),
            verification=VerificationSettings.from_dict(data.get("verification", {})),
            optimizer=ArmijoSettings.from_dict(data.get("optimizer", {})),
            tracing=(
                TracingSettings.from_dict(tracing_config)
                if tracing_config is not None
                else None
            ),
            ledger=(
                LedgerSettings.from_dict(ledger_config)
                if ledger_config is not None
                else None
            ),
            output_dir=str(output_dir) if output_dir is not None else None,
        )

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary for serialization."""
        result: dict[str, Any] = {
            "problem": self.problem.to_value(),
            "control": self.control,
            "direction": self.direction,
            "rho_list": list(self.rho_list),
            "monte_carlo": self.monte_carlo.to_dict(),
            "verification": self.verification.to_dict(),
            "optimizer": self.optimizer.to_dict(),
        }
        if self.tracing:
            result["tracing"] = self.tracing.to_dict()
        if self.ledger:
            result["ledger"] = self.ledger.to_dict()
        if self.output_dir is not None:
            result["output_dir"] = self.output_dir
        return result


def load_experiment_config(config_path: Path) -> ExperimentConfig:
    """Load an experiment configuration file.

    Args:
        config_path: Path to a JSON experiment file

    Returns:
        Parsed ExperimentConfig

    Raises:
        ConfigError: If the file is missing, unparseable, or invalid
    """
    try:
        with open(config_path, encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(
            f"🚫 CONFIG ERROR: cannot read {config_path}: {e}",
            key_path=str(config_path),
            original_error=e,
        )
    except json.JSONDecodeError as e:
        raise ConfigError(
            f"🚫 CONFIG ERROR: {config_path} is not valid JSON "
            f"(line {e.lineno}, column {e.colno})",
            key_path=str(config_path),
            original_error=e,
        )
    return ExperimentConfig.from_dict(data)


def default_output_dir() -> Path:
    """Output directory from TERMINAL_TIME_OUTPUT_DIR, else ./results."""
    return Path(os.environ.get(OUTPUT_DIR_ENV_VAR, DEFAULT_OUTPUT_DIR))
