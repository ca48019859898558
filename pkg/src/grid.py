"""Time grids, control boxes and piecewise-constant control paths."""

from __future__ import annotations

import itertools
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .error_messages import DiagnosticMessages
from .errors import BoxViolationError, ConfigError, GridMismatchError


FloatArray = NDArray[np.float64]

# Relative slack when testing box membership; values within it are clipped.
BOX_SLACK = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i*T/N on [0, T]."""

    horizon: float
    steps: int

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ConfigError(f"🚫 CONFIG ERROR: grid steps {self.steps} < 1")
        if not self.horizon > 0:
            raise ConfigError(f"🚫 CONFIG ERROR: horizon {self.horizon!r} <= 0")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @cached_property
    def nodes(self) -> FloatArray:
        nodes = np.arange(self.steps + 1, dtype=float) * self.dt
        nodes[-1] = self.horizon
        return nodes

    @cached_property
    def midpoints(self) -> FloatArray:
        return (np.arange(self.steps, dtype=float) + 0.5) * self.dt

    def require_same(self, other: TimeGrid) -> None:
        """Raise GridMismatchError unless ``other`` is this grid."""
        if other != self:
            raise GridMismatchError(
                DiagnosticMessages.grid_mismatch(self.steps, other.steps)
            )


@dataclass(frozen=True)
class TruncatedGrid:
    """The grid restricted to [0, tau].

    ``cell`` is the index of the grid cell holding tau from the left and
    ``fraction`` the position of tau inside it, so tau = t_cell + fraction*dt.
    The truncated grid has cell+1 cells; all have width dt except the last,
    whose width is fraction*dt.
    """

    grid: TimeGrid
    cell: int
    fraction: float

    @property
    def cells(self) -> int:
        return self.cell + 1

    @property
    def tau(self) -> float:
        return float(self.grid.nodes[self.cell] + self.fraction * self.grid.dt)

    @cached_property
    def widths(self) -> FloatArray:
        widths = np.full(self.cells, self.grid.dt)
        widths[-1] = self.fraction * self.grid.dt
        return widths

    @cached_property
    def nodes(self) -> FloatArray:
        return np.append(self.grid.nodes[: self.cells], self.tau)


@dataclass(frozen=True)
class ControlBox:
    """Per-coordinate closed intervals [low_a, high_a]."""

    low: tuple[float, ...]
    high: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.low) != len(self.high) or not self.low:
            raise ConfigError(
                "🚫 CONFIG ERROR: control box bounds have mismatched sizes"
            )
        for index, (lo, hi) in enumerate(zip(self.low, self.high, strict=True)):
            if not lo <= hi:
                raise ConfigError(
                    f"🚫 CONFIG ERROR: control box coordinate {index} has "
                    f"low {lo!r} > high {hi!r}",
                    key_path=f"box[{index}]",
                )

    @classmethod
    def from_bounds(
        cls, bounds: Sequence[float] | Sequence[Sequence[float]]
    ) -> ControlBox:
        """Build from ``[lo, hi]`` or ``[[lo_1, hi_1], ...]``."""
        array = np.asarray(bounds, dtype=float)
        if array.ndim == 1:
            array = array[None, :]
        if array.ndim != 2 or array.shape[1] != 2:
            raise ConfigError(
                "🚫 CONFIG ERROR: box must be [lo, hi] or a list of [lo, hi] pairs",
                key_path="box",
            )
        return cls(tuple(array[:, 0].tolist()), tuple(array[:, 1].tolist()))

    @property
    def dim(self) -> int:
        return len(self.low)

    @property
    def lower(self) -> FloatArray:
        return np.asarray(self.low, dtype=float)

    @property
    def upper(self) -> FloatArray:
        return np.asarray(self.high, dtype=float)

    @property
    def midpoint(self) -> FloatArray:
        return 0.5 * (self.lower + self.upper)

    def slack(self) -> FloatArray:
        return BOX_SLACK * np.maximum(
            1.0, np.maximum(np.abs(self.lower), np.abs(self.upper))
        )

    def first_violation(self, values: FloatArray) -> tuple[int, int] | None:
        """Return (cell, coordinate) of the first value outside the box."""
        slack = self.slack()
        outside = (values < self.lower - slack) | (values > self.upper + slack)
        outside |= ~np.isfinite(values)
        if not outside.any():
            return None
        cell, coordinate = np.argwhere(outside)[0]
        return int(cell), int(coordinate)

    def contains(self, values: ArrayLike) -> bool:
        array = np.atleast_2d(np.asarray(values, dtype=float))
        return self.first_violation(array) is None

    def clip(self, values: FloatArray) -> FloatArray:
        return np.clip(values, self.lower, self.upper)

    def corners(self) -> FloatArray:
        """All 2^k vertices, in lexicographic (low before high) order."""
        return np.array(list(itertools.product(*zip(self.low, self.high, strict=True))))

    def lattice(self, count: int) -> FloatArray:
        """Uniform lattice with ``count`` points per coordinate, corners included."""
        axes = [
            np.linspace(lo, hi, count)
            for lo, hi in zip(self.low, self.high, strict=True)
        ]
        return np.array(list(itertools.product(*axes)))


@dataclass(frozen=True, eq=False)
class ControlPath:
    """Piecewise-constant control: ``values[i]`` holds on [t_i, t_{i+1}).

    With a ``box`` every value must lie inside it. Directions are built
    without a box.
    """

    grid: TimeGrid
    values: FloatArray
    box: ControlBox | None = None

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != self.grid.steps:
            raise GridMismatchError(
                DiagnosticMessages.grid_mismatch(self.grid.steps, values.shape[0])
            )
        if self.box is not None:
            if values.shape[1] != self.box.dim:
                raise ConfigError(
                    f"🚫 CONFIG ERROR: control has {values.shape[1]} coordinates, "
                    f"box has {self.box.dim}"
                )
            violation = self.box.first_violation(values)
            if violation is not None:
                cell, coordinate = violation
                raise BoxViolationError(
                    DiagnosticMessages.box_violation(
                        cell,
                        coordinate,
                        float(values[cell, coordinate]),
                        self.box.low[coordinate],
                        self.box.high[coordinate],
                    ),
                    cell=cell,
                    coordinate=coordinate,
                )
            values = self.box.clip(values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def control_dim(self) -> int:
        return int(self.values.shape[1])

    @classmethod
    def constant(
        cls,
        grid: TimeGrid,
        value: float | Sequence[float],
        box: ControlBox | None = None,
    ) -> ControlPath:
        row = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(row, (grid.steps, 1)), box)

    @classmethod
    def from_function(
        cls,
        grid: TimeGrid,
        fn: Callable[[float], float | Sequence[float]],
        box: ControlBox | None = None,
    ) -> ControlPath:
        """Sample ``fn`` at cell midpoints."""
        rows = [
            np.atleast_1d(np.asarray(fn(float(t)), dtype=float)) for t in grid.midpoints
        ]
        return cls(grid, np.vstack(rows), box)

    def zeros_like(self) -> ControlPath:
        return ControlPath(self.grid, np.zeros_like(self.values))

    def perturbed(
        self, direction: ControlPath, rho: float, box: ControlBox | None = None
    ) -> ControlPath:
        """Return u + rho*v, checked against ``box`` (default: this path's box)."""
        self.grid.require_same(direction.grid)
        return ControlPath(
            self.grid, self.values + rho * direction.values, box if box else self.box
        )

    def combine(
        self, scale: float, other: ControlPath, other_scale: float
    ) -> ControlPath:
        """Return scale*self + other_scale*other as a direction (no box)."""
        self.grid.require_same(other.grid)
        return ControlPath(self.grid, scale * self.values + other_scale * other.values)


def cell_fraction(grid: TimeGrid, tau: float) -> tuple[int, float]:
    """Locate tau as (cell, fraction) with tau in (t_cell, t_cell+1]."""
    if tau <= 0.0:
        return 0, 0.0
    cell = min(grid.steps - 1, max(0, math.ceil(tau / grid.dt) - 1))
    fraction = (tau - grid.nodes[cell]) / grid.dt
    return cell, float(min(1.0, max(0.0, fraction)))
