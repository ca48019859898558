"""Tests for src/logging_utils.py - logging setup and artifact writers."""

import json
import logging
import os
from collections.abc import Generator
from pathlib import Path

import numpy as np
import pytest
from rich.logging import RichHandler

from src.logging_utils import (
    configure_logging,
    format_value,
    numbered_header,
    write_csv,
    write_json,
)


@pytest.fixture(autouse=True)
def restore_root_logger() -> Generator[None, None, None]:
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    for handler in root.handlers[:]:
        if handler not in handlers:
            handler.close()
    root.handlers[:] = handlers
    root.setLevel(level)


class TestConfigureLogging:
    """Tests for configure_logging."""

    def test_default_level_is_warning(self, clean_env: None) -> None:
        configure_logging()
        root = logging.getLogger()
        assert root.level == logging.WARNING
        assert any(isinstance(h, RichHandler) for h in root.handlers)

    def test_env_level(self, clean_env: None) -> None:
        """LOG_LEVEL from the environment applies when no level is passed."""
        os.environ["LOG_LEVEL"] = "debug"
        configure_logging()
        assert logging.getLogger().level == logging.DEBUG

    def test_unknown_level_falls_back(self, clean_env: None) -> None:
        configure_logging("chatty")
        assert logging.getLogger().level == logging.WARNING

    def test_log_file(self, clean_env: None, temp_dir: Path) -> None:
        """Records also go to the requested file."""
        log_file = temp_dir / "logs" / "run.log"
        configure_logging("INFO", log_file)
        logging.getLogger("src.forward").info("hitting time found")
        for handler in logging.getLogger().handlers:
            handler.flush()
        assert "INFO src.forward: hitting time found" in log_file.read_text()


class TestFormatValue:
    def test_float_uses_repr(self) -> None:
        """Floats keep full precision."""
        assert format_value(0.1) == "0.1"
        assert format_value(1 / 3) == repr(1 / 3)

    def test_numpy_float(self) -> None:
        assert format_value(np.float64(0.25)) == "0.25"

    def test_nan(self) -> None:
        assert format_value(float("nan")) == "nan"

    def test_non_float(self) -> None:
        assert format_value(3) == "3"
        assert format_value("I") == "I"


class TestWriters:
    """Tests for write_csv and write_json."""

    def test_write_csv(self, temp_dir: Path) -> None:
        rows = [(0.0, 1.5), (0.5, 2.0)]
        path = write_csv(temp_dir / "out" / "h.csv", ["t", "h"], rows)
        assert path.read_text() == "t,h\n0.0,1.5\n0.5,2.0\n"

    def test_write_json_sorted(self, temp_dir: Path) -> None:
        """JSON is sorted, indented and newline-terminated."""
        path = write_json(temp_dir / "tau.json", {"tau": 0.5, "case": "I"})
        text = path.read_text()
        assert text.endswith("}\n")
        assert text.index('"case"') < text.index('"tau"')

    def test_write_json_arrays(self, temp_dir: Path) -> None:
        path = write_json(temp_dir / "a.json", {"values": np.array([1.0, 2.0])})
        assert json.loads(path.read_text()) == {"values": [1.0, 2.0]}

    def test_identical_content_is_byte_identical(self, temp_dir: Path) -> None:
        data = {"b": [0.1, 0.2], "a": {"z": 1, "y": 2}}
        first = write_json(temp_dir / "1.json", data).read_bytes()
        second = write_json(temp_dir / "2.json", dict(reversed(list(data.items()))))
        assert first == second.read_bytes()


def test_numbered_header() -> None:
    assert numbered_header("X", 3) == ["X_1", "X_2", "X_3"]
    assert numbered_header("u", 0) == []
