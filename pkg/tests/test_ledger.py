"""Tests for src/ledger.py - Run ledger."""

import json
from collections.abc import Generator
from pathlib import Path
from typing import Any

import pytest

from src.ledger import LedgerEventType, RunLedger, get_ledger, init_ledger


@pytest.fixture
def enabled_ledger(temp_dir: Path) -> Generator[RunLedger, None, None]:
    """Create an enabled ledger for testing."""
    ledger = RunLedger(log_dir=temp_dir, enabled=True)
    yield ledger
    ledger.close()


def read_events(path: Path) -> list[dict[str, Any]]:
    return [json.loads(line) for line in path.read_text().splitlines() if line]


class TestLedgerEventType:
    def test_event_types_are_strings(self) -> None:
        """Event types serialize as plain strings."""
        assert LedgerEventType.RUN_START.value == "run_start"
        assert LedgerEventType.STAGE_COMPLETE.value == "stage_complete"
        assert LedgerEventType.ARTIFACT_WRITTEN.value == "artifact_written"
        assert LedgerEventType.VERDICT.value == "verdict"
        assert LedgerEventType.RUN_END.value == "run_end"


class TestRunLedger:
    """Tests for RunLedger."""

    def test_enabled_ledger_creates_file(self, temp_dir: Path) -> None:
        ledger = RunLedger(log_dir=temp_dir, enabled=True)
        try:
            assert (temp_dir / "ledger.jsonl").exists()
        finally:
            ledger.close()

    def test_disabled_ledger_writes_nothing(self, temp_dir: Path) -> None:
        """A disabled ledger creates no file and ignores events."""
        ledger = RunLedger(log_dir=temp_dir, enabled=False)
        ledger.log_run_start("tau", {"grid": 100})
        assert not (temp_dir / "ledger.jsonl").exists()

    def test_run_events(self, enabled_ledger: RunLedger) -> None:
        """A full run produces one JSON object per line in order."""
        enabled_ledger.log_run_start("verify-smp", {"problem": "example-affine"})
        enabled_ledger.log_stage("verify-smp", "simulate", paths=1)
        enabled_ledger.log_artifact("verify-smp", Path("results/smp_report.json"))
        enabled_ledger.log_verdict("verify-smp", "certified", max_violation=0.0)
        enabled_ledger.log_run_end("verify-smp", 0)

        events = read_events(enabled_ledger.log_path)
        assert [e["event_type"] for e in events] == [
            "run_start",
            "stage_complete",
            "artifact_written",
            "verdict",
            "run_end",
        ]
        assert events[0]["details"] == {"problem": "example-affine"}
        assert events[1]["details"] == {"stage": "simulate", "paths": 1}
        assert events[2]["details"]["path"].endswith("smp_report.json")
        assert events[3]["outcome"] == "certified"
        assert events[4]["outcome"] == "success"
        assert all("timestamp" in e for e in events)

    def test_failed_run_outcome(self, enabled_ledger: RunLedger) -> None:
        enabled_ledger.log_run_end("tau-derivative", 1)
        (event,) = read_events(enabled_ledger.log_path)
        assert event["outcome"] == "exit_1"
        assert event["details"] == {"exit_code": 1}

    def test_verdict_without_violation(self, enabled_ledger: RunLedger) -> None:
        enabled_ledger.log_verdict("verify-smp", "inconclusive")
        (event,) = read_events(enabled_ledger.log_path)
        assert "details" not in event


class TestGlobalLedger:
    """Tests for get_ledger and init_ledger."""

    def test_default_is_disabled(self) -> None:
        assert get_ledger().enabled is False

    def test_init_replaces_global(self, temp_dir: Path) -> None:
        ledger = init_ledger(temp_dir, enabled=True)
        assert get_ledger() is ledger
        assert ledger.enabled is True
