"""
Observability Utils

In-process counters, gauges and histograms for one workbench run, plus the
helpers that feed them: fit tracking for the model roster, median wall-clock
timing, a performance decorator for service entry points, and stage tracking
for multi-step CLI commands.
"""

import functools
import statistics
import time
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Callable, Dict, List, Optional, Tuple, TypeVar

from app.utils.logger import LogContext, get_logger, log_with_context

T = TypeVar('T')

logger = get_logger(__name__)


@dataclass
class MetricsStore:
    """Metric values keyed by dotted names such as ``training.xgb.count``."""
    counters: Dict[str, int] = field(default_factory=dict)
    gauges: Dict[str, float] = field(default_factory=dict)
    histograms: Dict[str, List[float]] = field(default_factory=dict)

    def increment(self, name: str, value: int = 1) -> None:
        self.counters[name] = self.counters.get(name, 0) + value

    def observe(self, name: str, value: float) -> None:
        self.histograms.setdefault(name, []).append(value)

    def summary(self) -> Dict[str, Dict[str, float]]:
        return {
            name: {
                "count": len(values),
                "min": min(values),
                "max": max(values),
                "avg": statistics.fmean(values),
                "median": statistics.median(values),
                "latest": values[-1],
            }
            for name, values in self.histograms.items()
            if values
        }

    def clear(self) -> None:
        self.counters.clear()
        self.gauges.clear()
        self.histograms.clear()


# A run (one CLI command) lives in one process; worker processes keep their own copy
_store = MetricsStore()


def _ms(seconds: float) -> float:
    return round(seconds * 1000, 2)


def _record_outcome(prefix: str, duration: float, success: bool) -> None:
    """Count an operation under ``prefix`` and keep its duration."""
    _store.increment(f"{prefix}.count")
    _store.observe(f"{prefix}.duration", duration)
    if not success:
        _store.increment(f"{prefix}.error_count")


class TrainingMetrics:
    """Fit bookkeeping for the cross-validation harness."""

    @staticmethod
    def track_fit(
        model: str,
        n_rows: int,
        duration: float,
        fold: Optional[int] = None,
        success: bool = True,
        error: Optional[str] = None
    ) -> None:
        """
        Record one model fit.

        Failed fits are counted but their duration is not observed, so the
        duration and throughput histograms only describe trained models.

        Args:
            model: Roster name of the model
            n_rows: Number of training rows
            duration: Median wall-clock fit time in seconds
            fold: Validation fold index if the fit is part of cross-validation
            success: Whether the fit succeeded
            error: Error message if the fit failed
        """
        prefix = f"training.{model}"
        _store.increment(f"{prefix}.count")
        extra: Dict[str, Any] = {"fold": fold, "n_rows": n_rows, "duration_ms": _ms(duration)}

        if not success:
            _store.increment(f"{prefix}.error_count")
            extra["error"] = error
            log_with_context("error", f"Model fit failed: {model}",
                             LogContext(component="training", operation=model, extra=extra), logger)
            return

        _store.observe(f"{prefix}.duration", duration)
        if duration > 0:
            _store.observe(f"{prefix}.rows_per_second", n_rows / duration)
        log_with_context("debug", f"Model fit completed: {model}",
                         LogContext(component="training", operation=model, extra=extra), logger)


def median_timing(func: Callable[[], T], repeats: int = 3) -> Tuple[T, float]:
    """
    Run a callable several times and report the median wall-clock duration.

    Args:
        func: Zero-argument callable to time
        repeats: Number of timed runs (at least one)

    Returns:
        Tuple of (result of the last run, median duration in seconds)
    """
    durations: List[float] = []
    result: Any = None
    for _ in range(max(1, repeats)):
        start = time.perf_counter()
        result = func()
        durations.append(time.perf_counter() - start)
    return result, statistics.median(durations)


def track_performance(component: str, operation: str) -> Callable:
    """
    Decorator that times a service entry point and records its outcome.

    Args:
        component: Component name (e.g., 'simulation', 'harness')
        operation: Operation name (e.g., 'batch', 'kfold')

    Returns:
        Decorated function with performance tracking
    """
    prefix = f"{component}.{operation}"

    def decorator(func: Callable[..., T]) -> Callable[..., T]:
        @functools.wraps(func)
        def wrapper(*args, **kwargs) -> T:
            start = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                # failures skip the duration histogram
                _store.increment(f"{prefix}.error_count")
                context = LogContext(
                    component=component,
                    operation=operation,
                    extra={"duration_ms": _ms(time.perf_counter() - start), "error": str(e)},
                )
                log_with_context("error", f"Operation failed: {prefix}", context, logger)
                raise

            duration = time.perf_counter() - start
            _store.increment(f"{prefix}.count")
            _store.observe(f"{prefix}.duration", duration)

            extra: Dict[str, Any] = {"duration_ms": _ms(duration)}
            try:
                extra["result_size"] = len(result)
            except TypeError:
                pass
            context = LogContext(component=component, operation=operation, extra=extra)
            log_with_context("info", f"Operation completed: {prefix}", context, logger)
            return result

        return wrapper
    return decorator


class PipelineTracker:
    """
    Stage tracking for one CLI command.

    The pipeline context is a plain dict holding ``stages`` (name to start
    time, duration and status) and the overall ``status``. Only one stage is
    open at a time.
    """

    @staticmethod
    def start_pipeline(run_id: str, pipeline_name: str = "experiment") -> Dict[str, Any]:
        pipeline_context: Dict[str, Any] = {
            "run_id": run_id,
            "pipeline_name": pipeline_name,
            "start_time": time.perf_counter(),
            "stages": {},
            "current_stage": None,
        }
        log_with_context(
            "info",
            f"Pipeline started: {pipeline_name}",
            LogContext(component="pipeline", operation="start", run_id=run_id),
            logger,
        )
        return pipeline_context

    @staticmethod
    def start_stage(pipeline_context: Dict[str, Any], stage_name: str) -> None:
        pipeline_context["stages"][stage_name] = {
            "start_time": time.perf_counter(),
            "duration": None,
            "status": "in_progress",
        }
        pipeline_context["current_stage"] = stage_name
        log_with_context(
            "debug",
            f"Pipeline stage started: {stage_name}",
            LogContext(component="pipeline_stage", operation="start", run_id=pipeline_context["run_id"]),
            logger,
        )

    @staticmethod
    def end_stage(
        pipeline_context: Dict[str, Any],
        success: bool = True,
        error: Optional[str] = None,
        metrics: Optional[Dict[str, Any]] = None
    ) -> None:
        """
        Close the open stage.

        Args:
            pipeline_context: The pipeline context dictionary
            success: Whether the stage succeeded
            error: Error message if the stage failed
            metrics: Stage results to attach to the log event, e.g. row counts
        """
        stage_name = pipeline_context["current_stage"]
        if not stage_name:
            logger.warning("No pipeline stage in progress")
            return

        stage = pipeline_context["stages"][stage_name]
        stage["duration"] = time.perf_counter() - stage["start_time"]
        stage["status"] = "completed" if success else "failed"
        pipeline_context["current_stage"] = None
        _record_outcome(f"pipeline.stage.{stage_name}", stage["duration"], success)

        extra: Dict[str, Any] = {"stage_name": stage_name, "duration_ms": _ms(stage["duration"])}
        extra.update(metrics or {})
        if error:
            extra["error"] = error
        log_with_context(
            "info" if success else "error",
            f"Pipeline stage {stage['status']}: {stage_name}",
            LogContext(component="pipeline_stage", operation="end", run_id=pipeline_context["run_id"], extra=extra),
            logger,
        )

    @staticmethod
    def end_pipeline(
        pipeline_context: Dict[str, Any],
        success: bool = True,
        error: Optional[str] = None
    ) -> float:
        """
        Close the pipeline and return its duration in seconds.

        A stage still open at this point is marked failed.
        """
        if pipeline_context["current_stage"]:
            PipelineTracker.end_stage(pipeline_context, success=False, error="stage still open at pipeline end")

        duration = time.perf_counter() - pipeline_context["start_time"]
        pipeline_context["duration"] = duration
        pipeline_context["status"] = "completed" if success else "failed"
        name = pipeline_context["pipeline_name"]
        _record_outcome(f"pipeline.{name}", duration, success)

        extra: Dict[str, Any] = {"duration_ms": _ms(duration), "stages_count": len(pipeline_context["stages"])}
        if error:
            extra["error"] = error
        log_with_context(
            "info" if success else "error",
            f"Pipeline {pipeline_context['status']}: {name}",
            LogContext(component="pipeline", operation="end", run_id=pipeline_context["run_id"], extra=extra),
            logger,
        )
        return duration


def set_gauge(name: str, value: float) -> None:
    _store.gauges[name] = value


def get_metrics() -> Dict[str, Any]:
    """Snapshot of every metric with histograms reduced to summary statistics."""
    return {
        "counters": dict(_store.counters),
        "gauges": dict(_store.gauges),
        "histograms": _store.summary(),
        "timestamp": datetime.now().isoformat(),
    }


def reset_metrics() -> None:
    _store.clear()
