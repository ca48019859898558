"""Exception hierarchy for the toolkit.

Every error raised on purpose by the toolkit derives from ToolkitError so the
CLI can map it to an exit code in one place:

- ConfigError and its subclasses: usage or configuration problems (exit 2)
- everything else: a numerical or verification failure (exit 1)
"""


class ToolkitError(Exception):
    """Base class for toolkit errors.

    Attributes:
        key_path: Dotted config key or data location the error refers to
        original_error: Underlying exception, when one was caught
    """

    exit_code: int = 1

    def __init__(
        self,
        message: str,
        key_path: str | None = None,
        original_error: Exception | None = None,
    ) -> None:
        """Initialize toolkit error.

        Args:
            message: Error message
            key_path: Offending config key or data location if applicable
            original_error: Original exception that was caught
        """
        super().__init__(message)
        self.key_path = key_path
        self.original_error = original_error


class ConfigError(ToolkitError):
    """Invalid configuration, problem data, or command-line usage."""

    exit_code = 2


class RegistryError(ConfigError):
    """Unknown builtin problem or problem family."""


class BoxViolationError(ToolkitError):
    """A control value lies outside the control box."""

    def __init__(
        self,
        message: str,
        cell: int | None = None,
        coordinate: int | None = None,
    ) -> None:
        super().__init__(message, key_path=f"control[{cell}][{coordinate}]")
        self.cell = cell
        self.coordinate = coordinate


class GridMismatchError(ToolkitError):
    """Two objects that must share a time grid do not."""


class SimulationError(ToolkitError):
    """The forward simulation produced a non-finite state."""

    def __init__(self, message: str, path: int, node: int) -> None:
        super().__init__(message, key_path=f"X[{path}][{node}]")
        self.path = path
        self.node = node


class ContractError(ToolkitError):
    """An ensemble lacks data a downstream computation needs."""


class DegenerateRateError(ToolkitError):
    """The mean-constraint rate vanishes at the terminal time."""


class DiscontinuityError(ToolkitError):
    """The mean-constraint rate jumps at the terminal time."""


class IllConditionedError(ToolkitError):
    """Too few paths for the regression basis."""


class DegenerateIntervalError(ToolkitError):
    """The backward interval [0, tau] is empty."""
