"""Pytest configuration and fixtures for terminal-time-smp tests."""

import json
import os
import tempfile
from collections.abc import Generator
from pathlib import Path
from typing import Any

import pytest

from src import ledger as ledger_module
from src import tracing as tracing_module
from src.config import MonteCarloSettings, Scheme
from src.forward import (
    PathEnsemble,
    TerminalTimeResult,
    simulate_with_settings,
    terminal_time,
)
from src.grid import ControlPath, TimeGrid
from src.problem import ProblemSpec
from src.registry import register_builtin


# Grid used by the closed-form checks
FINE_GRID = 2000


# ============================================================================
# Filesystem and Environment Fixtures
# ============================================================================


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Create a temporary directory for test files."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def clean_env() -> Generator[None, None, None]:
    """Temporarily clear environment variables the toolkit reads."""
    env_vars = ["LOG_LEVEL", "TERMINAL_TIME_OUTPUT_DIR", "OTEL_TRACING_ENABLED"]
    original = {k: os.environ.get(k) for k in env_vars}

    for var in env_vars:
        if var in os.environ:
            del os.environ[var]

    yield

    for var, value in original.items():
        if value is not None:
            os.environ[var] = value
        elif var in os.environ:
            del os.environ[var]


@pytest.fixture(autouse=True)
def reset_globals() -> Generator[None, None, None]:
    """Reset the global tracing manager and ledger between tests."""
    tracing_module._global_tracing = None
    ledger_module._ledger = None
    yield
    if ledger_module._ledger is not None:
        ledger_module._ledger.close()
    tracing_module._global_tracing = None
    ledger_module._ledger = None


@pytest.fixture
def sample_experiment() -> dict[str, Any]:
    """A complete experiment configuration."""
    return {
        "problem": "example-affine",
        "control": 1.0,
        "direction": 1.0,
        "rho_list": [0.1, 0.05],
        "monte_carlo": {"grid": 200, "seed": 7, "threads": 2, "scheme": "euler"},
        "verification": {"probes": 3, "tol": 1e-6, "penalty_mode": "adjoint"},
        "optimizer": {"max_iters": 5},
        "ledger": {"enabled": False, "log_dir": "logs"},
    }


@pytest.fixture
def experiment_file(temp_dir: Path, sample_experiment: dict[str, Any]) -> Path:
    """Write sample_experiment to a JSON file."""
    path = temp_dir / "experiment.json"
    with open(path, "w") as f:
        json.dump(sample_experiment, f)
    return path


# ============================================================================
# Problem Fixtures
# ============================================================================


@pytest.fixture
def affine_spec() -> ProblemSpec:
    """b = x + u, f = u, Phi = x, box [1, 2]."""
    return register_builtin("example-affine")


@pytest.fixture
def kink_spec() -> ProblemSpec:
    return register_builtin("example-kink")


@pytest.fixture
def flat_spec() -> ProblemSpec:
    return register_builtin("example-flat")


@pytest.fixture
def toy_spec() -> ProblemSpec:
    """b = u, f = u^2, Phi = x, alpha = 0.5."""
    return register_builtin("toy-linear-deterministic")


@pytest.fixture
def sde_spec() -> ProblemSpec:
    return register_builtin("toy-linear-sde")


# ============================================================================
# Simulation Fixtures
# ============================================================================


@pytest.fixture
def euler_settings() -> MonteCarloSettings:
    """Deterministic Euler settings on the fine grid."""
    return MonteCarloSettings(grid=FINE_GRID, seed=11)


@pytest.fixture
def rk4_settings() -> MonteCarloSettings:
    return MonteCarloSettings(grid=FINE_GRID, seed=11, scheme=Scheme.RK4)


@pytest.fixture
def fine_grid(affine_spec: ProblemSpec) -> TimeGrid:
    return affine_spec.time_grid(FINE_GRID)


@pytest.fixture
def affine_ensemble(
    affine_spec: ProblemSpec, fine_grid: TimeGrid, euler_settings: MonteCarloSettings
) -> PathEnsemble:
    """Euler paths of the affine example under u = 1."""
    control = ControlPath.constant(fine_grid, 1.0, affine_spec.box)
    return simulate_with_settings(affine_spec, control, euler_settings)


@pytest.fixture
def affine_ttr(
    affine_spec: ProblemSpec, affine_ensemble: PathEnsemble
) -> TerminalTimeResult:
    return terminal_time(affine_spec, affine_ensemble)[2]


@pytest.fixture
def toy_ensemble(
    toy_spec: ProblemSpec, euler_settings: MonteCarloSettings
) -> PathEnsemble:
    """Euler paths of the deterministic toy under u = 1."""
    grid = toy_spec.time_grid(FINE_GRID)
    return simulate_with_settings(
        toy_spec, ControlPath.constant(grid, 1.0, toy_spec.box), euler_settings
    )
