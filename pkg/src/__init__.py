"""Terminal-time stochastic optimal control toolkit."""

from .config import *
from .errors import (
    BoxViolationError,
    ConfigError,
    ContractError,
    DegenerateIntervalError,
    DegenerateRateError,
    DiscontinuityError,
    GridMismatchError,
    IllConditionedError,
    RegistryError,
    SimulationError,
    ToolkitError,
)
from .forward import (
    Case,
    PathEnsemble,
    TerminalTimeResult,
    hitting_time,
    simulate,
    terminal_time,
)
from .grid import ControlBox, ControlPath, TimeGrid
from .optimizer import dp_oracle, improve
from .problem import ProblemSpec, finite_difference_derivatives
from .registry import build_family, register_builtin
from .smp import SMPReport, verify


__version__ = "1.0.0"
__all__ = [
    "BoxViolationError",
    "Case",
    "ConfigError",
    "ContractError",
    "ControlBox",
    "ControlPath",
    "DegenerateIntervalError",
    "DegenerateRateError",
    "DiscontinuityError",
    "GridMismatchError",
    "IllConditionedError",
    "PathEnsemble",
    "ProblemSpec",
    "RegistryError",
    "SMPReport",
    "SimulationError",
    "TerminalTimeResult",
    "TimeGrid",
    "ToolkitError",
    # Pipeline
    "build_family",
    "dp_oracle",
    "finite_difference_derivatives",
    "hitting_time",
    "improve",
    "register_builtin",
    "simulate",
    "terminal_time",
    "verify",
]
