"""Run ledger: a JSON Lines record of what an experiment did.

One JSON object per line on a rotating file handler (10MB max, 5 backups).
Event types: run_start, stage_complete, artifact_written, verdict, run_end.
The ledger lives outside the output directory and is disabled by default,
so result artifacts stay byte-identical between runs.
"""

import contextlib
import json
import logging
from datetime import UTC, datetime
from enum import Enum
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any


class LedgerEventType(str, Enum):
    """Types of ledger events."""

    RUN_START = "run_start"
    STAGE_COMPLETE = "stage_complete"
    ARTIFACT_WRITTEN = "artifact_written"
    VERDICT = "verdict"
    RUN_END = "run_end"


class RunLedger:
    """Ledger of experiment runs.

    Records the command, its parameters, completed stages, written
    artifacts and verdicts to a rotating JSON Lines file.
    """

    MAX_BYTES = 10 * 1024 * 1024  # 10 MB per file
    BACKUP_COUNT = 5

    def __init__(
        self,
        log_dir: Path | str | None = None,
        log_file: str = "ledger.jsonl",
        enabled: bool = True,
    ) -> None:
        """Initialize the run ledger.

        Args:
            log_dir: Directory for the ledger. Defaults to current directory.
            log_file: Name of the ledger file.
            enabled: Whether the ledger records anything.
        """
        self.enabled = enabled
        self._logger: logging.Logger | None = None

        if not enabled:
            return

        log_dir = Path.cwd() if log_dir is None else Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        log_path = log_dir / log_file

        self._logger = logging.getLogger("terminal_time_smp.ledger")
        self._logger.setLevel(logging.INFO)
        self._logger.propagate = False

        for handler in self._logger.handlers[:]:
            self._logger.removeHandler(handler)

        handler = RotatingFileHandler(
            log_path,
            maxBytes=self.MAX_BYTES,
            backupCount=self.BACKUP_COUNT,
            encoding="utf-8",
        )
        handler.setFormatter(logging.Formatter("%(message)s"))
        self._logger.addHandler(handler)

        self.log_path = log_path

    def _log_event(
        self,
        event_type: LedgerEventType,
        command: str,
        outcome: str,
        details: dict[str, Any] | None = None,
    ) -> None:
        """Append one event.

        Args:
            event_type: Type of ledger event
            command: CLI subcommand the event belongs to
            outcome: Result of the step (started, ok, certified, exit_1, ...)
            details: Additional details about the event
        """
        if not self.enabled or self._logger is None:
            return

        event: dict[str, Any] = {
            "timestamp": datetime.now(UTC).isoformat(),
            "event_type": event_type.value,
            "command": command,
            "outcome": outcome,
        }
        if details:
            event["details"] = details

        # A failing ledger never aborts an experiment
        with contextlib.suppress(Exception):
            self._logger.info(json.dumps(event, default=str, sort_keys=True))

    def log_run_start(self, command: str, parameters: dict[str, Any]) -> None:
        """Log the start of a subcommand with its resolved parameters."""
        self._log_event(LedgerEventType.RUN_START, command, "started", parameters)

    def log_stage(self, command: str, stage: str, **details: Any) -> None:
        """Log a completed pipeline stage."""
        self._log_event(
            LedgerEventType.STAGE_COMPLETE, command, "ok", {"stage": stage, **details}
        )

    def log_artifact(self, command: str, path: Path) -> None:
        """Log a written artifact."""
        self._log_event(
            LedgerEventType.ARTIFACT_WRITTEN, command, "ok", {"path": str(path)}
        )

    def log_verdict(
        self, command: str, verdict: str, max_violation: float | None = None
    ) -> None:
        """Log a verification verdict."""
        details = {} if max_violation is None else {"max_violation": max_violation}
        self._log_event(LedgerEventType.VERDICT, command, verdict, details or None)

    def log_run_end(self, command: str, exit_code: int) -> None:
        """Log the end of a subcommand."""
        outcome = "success" if exit_code == 0 else f"exit_{exit_code}"
        self._log_event(
            LedgerEventType.RUN_END, command, outcome, {"exit_code": exit_code}
        )

    def close(self) -> None:
        """Close the ledger and flush handlers."""
        if self._logger:
            for handler in self._logger.handlers[:]:
                handler.close()
                self._logger.removeHandler(handler)


_ledger: RunLedger | None = None


def get_ledger() -> RunLedger:
    """Get the global ledger (disabled until init_ledger is called)."""
    global _ledger
    if _ledger is None:
        _ledger = RunLedger(enabled=False)
    return _ledger


def init_ledger(log_dir: Path | str | None = None, enabled: bool = True) -> RunLedger:
    """Initialize the global ledger.

    Args:
        log_dir: Directory for the ledger file
        enabled: Whether the ledger records anything

    Returns:
        The initialized RunLedger instance
    """
    global _ledger
    if _ledger is not None:
        _ledger.close()
    _ledger = RunLedger(log_dir=log_dir, enabled=enabled)
    return _ledger
