"""OpenTelemetry spans around pipeline stages.

Every stage is timed and kept in the manager's history so the CLI can write
stage durations to the run ledger. Spans are exported only when tracing is
enabled (settings or OTEL_TRACING_ENABLED) and opentelemetry-sdk is installed.
"""

from __future__ import annotations

import logging
import os
import time
from collections.abc import Generator
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np


if TYPE_CHECKING:
    from .config import TracingSettings

try:
    from opentelemetry import trace
    from opentelemetry.sdk.resources import SERVICE_NAME, Resource
    from opentelemetry.sdk.trace import TracerProvider
    from opentelemetry.sdk.trace.export import (
        BatchSpanProcessor,
        ConsoleSpanExporter,
        SimpleSpanProcessor,
    )
    from opentelemetry.trace import Status, StatusCode

    OTEL_AVAILABLE = True
except ImportError:
    OTEL_AVAILABLE = False
    trace = None  # type: ignore[assignment]


logger = logging.getLogger(__name__)

DEFAULT_SERVICE_NAME = "terminal-time-smp"
ENABLED_ENV_VAR = "OTEL_TRACING_ENABLED"
SPAN_PREFIX = "tts"
EXPORTERS = ("console", "otlp", "none")


def tracing_enabled(settings: TracingSettings | None) -> bool:
    """OTEL_TRACING_ENABLED wins over settings; both absent means off."""
    flag = os.environ.get(ENABLED_ENV_VAR, "").lower()
    if flag in ("true", "1", "yes"):
        return True
    if flag in ("false", "0", "no"):
        return False
    return settings.enabled if settings else False


def span_value(value: Any) -> str | int | float | bool | None:
    """Coerce a stage attribute to a type spans accept; None is dropped."""
    if value is None or isinstance(value, (str, bool, int, float)):
        return value
    if isinstance(value, np.generic):
        return value.item()  # type: ignore[no-any-return]
    if hasattr(value, "value") and isinstance(value.value, str):
        return value.value
    return str(value)


@dataclass
class StageRecord:
    """A finished stage: name, wall time, attributes and the error if any."""

    name: str
    duration_ms: float
    attributes: dict[str, Any] = field(default_factory=dict)
    error: str | None = None


class _NullSpan:
    def set_attribute(self, key: str, value: Any) -> None:
        pass

    def set_status(self, status: Any, description: str | None = None) -> None:
        pass

    def record_exception(self, exception: BaseException) -> None:
        pass


class Stage:
    """Handle yielded inside ``TracingManager.stage``."""

    def __init__(self, name: str, span: Any, attributes: dict[str, Any]) -> None:
        self.name = name
        self._span = span
        self.attributes = attributes

    def record(self, **attributes: Any) -> None:
        """Attach results (tau, case, verdict, ...) to the stage."""
        for key, value in attributes.items():
            coerced = span_value(value)
            if coerced is None:
                continue
            self.attributes[key] = coerced
            self._span.set_attribute(f"{SPAN_PREFIX}.{key}", coerced)


class TracingManager:
    """Times pipeline stages and, when enabled, exports them as spans.

    Usage:
        tracing = TracingManager(settings)
        tracing.initialize()

        with tracing.stage("simulate", problem="example-affine", grid=2000) as stage:
            ensemble = simulate(...)
            stage.record(paths=ensemble.path_count)
    """

    def __init__(self, settings: TracingSettings | None = None) -> None:
        self._settings = settings
        self._tracer: Any = None
        self._initialized = False
        self._enabled = tracing_enabled(settings)
        self.history: list[StageRecord] = []

    @property
    def is_enabled(self) -> bool:
        return self._enabled and OTEL_AVAILABLE

    @property
    def exporting(self) -> bool:
        """True once a tracer provider is installed."""
        return self._initialized and self._tracer is not None

    def initialize(self) -> bool:
        """Install a tracer provider for the configured exporter.

        Returns:
            True if spans will be exported, False otherwise.
        """
        if self._initialized:
            return True
        if not self._enabled:
            return False
        if not OTEL_AVAILABLE:
            logger.info(
                "opentelemetry-sdk not installed; stages are timed but not exported"
            )
            return False

        exporter = self._settings.exporter if self._settings else "console"
        if exporter not in EXPORTERS:
            logger.warning("unknown span exporter %r; tracing disabled", exporter)
            return False
        try:
            service = DEFAULT_SERVICE_NAME
            if self._settings:
                service = self._settings.service_name
            resource = Resource(attributes={SERVICE_NAME: service})
            provider = TracerProvider(resource=resource)
            processor = self._processor(exporter)
            if processor is not None:
                provider.add_span_processor(processor)
            trace.set_tracer_provider(provider)
            self._tracer = trace.get_tracer(__name__)
        except Exception as e:
            logger.warning("failed to initialize tracing: %s", e)
            return False

        self._initialized = True
        logger.info("tracing initialized (exporter: %s)", exporter)
        return True

    def _processor(self, exporter: str) -> Any:
        if exporter == "none":
            return None
        if exporter == "otlp":
            try:
                from opentelemetry.exporter.otlp.proto.grpc.trace_exporter import (
                    OTLPSpanExporter,
                )
            except ImportError:
                logger.warning("OTLP exporter not installed, using console")
            else:
                endpoint = (
                    self._settings.otlp_endpoint if self._settings else None
                ) or os.environ.get("OTEL_EXPORTER_OTLP_ENDPOINT")
                return BatchSpanProcessor(OTLPSpanExporter(endpoint=endpoint))
        return SimpleSpanProcessor(ConsoleSpanExporter())

    @contextmanager
    def stage(self, name: str, **attributes: Any) -> Generator[Stage, None, None]:
        """Time one stage; errors are recorded on the span and re-raised."""
        start = time.perf_counter()
        error: str | None = None

        if self.exporting:
            span_cm: Any = self._tracer.start_as_current_span(f"{SPAN_PREFIX}.{name}")
        else:
            span_cm = _null_span()

        with span_cm as span:
            handle = Stage(name, span, {})
            handle.record(**attributes)
            try:
                yield handle
            except BaseException as e:
                error = f"{type(e).__name__}: {e}"
                span.record_exception(e)
                if self.exporting:
                    span.set_status(Status(StatusCode.ERROR, str(e)))
                raise
            finally:
                duration_ms = (time.perf_counter() - start) * 1000.0
                span.set_attribute(f"{SPAN_PREFIX}.duration_ms", duration_ms)
                self.history.append(
                    StageRecord(name, duration_ms, dict(handle.attributes), error)
                )
            if self.exporting:
                span.set_status(Status(StatusCode.OK))

    def drain(self) -> list[StageRecord]:
        """Return and clear the finished stages."""
        records, self.history = self.history, []
        return records


@contextmanager
def _null_span() -> Generator[_NullSpan, None, None]:
    yield _NullSpan()


_global_tracing: TracingManager | None = None


def get_tracing_manager(settings: TracingSettings | None = None) -> TracingManager:
    """Get or create the global tracing manager."""
    global _global_tracing
    if _global_tracing is None:
        _global_tracing = TracingManager(settings)
    return _global_tracing


def initialize_tracing(settings: TracingSettings | None = None) -> bool:
    """Create the global manager from settings and install its provider."""
    global _global_tracing
    if _global_tracing is None or settings is not None:
        _global_tracing = TracingManager(settings)
    return _global_tracing.initialize()
