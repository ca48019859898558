"""Logging setup and deterministic artifact writers.

Artifacts carry no timestamps: CSV floats use ``repr`` (shortest round-trip
form) and JSON is written with sorted keys, so identical runs produce
identical files.
"""

import csv
import json
import logging
import math
import os
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

from rich.logging import RichHandler

from .config import LOG_LEVEL_ENV_VAR


logger = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


def configure_logging(level: str | None = None, log_file: Path | None = None) -> None:
    """Configure the root logger for console output and an optional file.

    Args:
        level: Level name; defaults to LOG_LEVEL from the environment, then WARNING
        log_file: Also write records to this file
    """
    name = (level or os.environ.get(LOG_LEVEL_ENV_VAR) or "WARNING").upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        numeric = logging.WARNING

    handlers: list[logging.Handler] = [
        RichHandler(show_time=False, show_path=False, markup=False)
    ]
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handlers.append(file_handler)
    logging.basicConfig(
        level=numeric, format="%(message)s", handlers=handlers, force=True
    )


def format_value(value: Any) -> str:
    """CSV cell text: ``repr`` for floats (numpy included), ``str`` otherwise."""
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(float(value))
    return str(value)


def _jsonable(value: Any) -> Any:
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write ``rows`` under ``header``; returns ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(cell) for cell in row])
    logger.debug("wrote %s", path)
    return path


def write_json(path: Path, data: dict[str, Any]) -> Path:
    """Write ``data`` with sorted keys and a trailing newline; returns ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(
            data, f, indent=2, sort_keys=True, ensure_ascii=False, default=_jsonable
        )
        f.write("\n")
    logger.debug("wrote %s", path)
    return path


def numbered_header(prefix: str, count: int) -> list[str]:
    """``prefix_1 .. prefix_count``."""
    return [f"{prefix}_{index}" for index in range(1, count + 1)]
