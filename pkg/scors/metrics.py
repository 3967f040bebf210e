from __future__ import annotations

import time
from pathlib import Path
from typing import Optional

from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile

# Private registry; the harness dumps it to metrics.prom at the end of an experiment
_registry: Optional[CollectorRegistry] = None

RUNS_TOTAL: Optional[Counter] = None
ITERATIONS_TOTAL: Optional[Counter] = None
COORDINATE_EVALUATIONS_TOTAL: Optional[Counter] = None
RUN_FAILURES_TOTAL: Optional[Counter] = None
EXPERIMENT_DURATION_SECONDS: Optional[Histogram] = None


def get_registry() -> CollectorRegistry:
    global _registry
    if _registry is None:
        _registry = CollectorRegistry()
    return _registry


def _init_metrics() -> None:
    global RUNS_TOTAL, ITERATIONS_TOTAL, COORDINATE_EVALUATIONS_TOTAL
    global RUN_FAILURES_TOTAL, EXPERIMENT_DURATION_SECONDS

    reg = get_registry()

    if RUNS_TOTAL is None:
        RUNS_TOTAL = Counter(
            "scors_runs_total",
            "Completed optimizer runs",
            ["method"],
            registry=reg,
        )
    if ITERATIONS_TOTAL is None:
        ITERATIONS_TOTAL = Counter(
            "scors_iterations_total",
            "Optimizer iterations executed",
            ["method"],
            registry=reg,
        )
    if COORDINATE_EVALUATIONS_TOTAL is None:
        COORDINATE_EVALUATIONS_TOTAL = Counter(
            "scors_coordinate_evaluations_total",
            "Gradient coordinates computed",
            ["method"],
            registry=reg,
        )
    if RUN_FAILURES_TOTAL is None:
        RUN_FAILURES_TOTAL = Counter(
            "scors_run_failures_total",
            "Runs or experiments aborted by an error",
            ["reason"],
            registry=reg,
        )
    if EXPERIMENT_DURATION_SECONDS is None:
        EXPERIMENT_DURATION_SECONDS = Histogram(
            "scors_experiment_duration_seconds",
            "Wall time of a harness experiment",
            ["experiment"],
            buckets=(0.1, 0.5, 1, 5, 10, 30, 60, 180, 300, 900, 3600),
            registry=reg,
        )


def run_completed(method: str, iterations: int, coordinate_evaluations: int) -> None:
    _init_metrics()
    if RUNS_TOTAL is not None:
        RUNS_TOTAL.labels(method=method).inc()
    if ITERATIONS_TOTAL is not None:
        ITERATIONS_TOTAL.labels(method=method).inc(iterations)
    if COORDINATE_EVALUATIONS_TOTAL is not None:
        COORDINATE_EVALUATIONS_TOTAL.labels(method=method).inc(coordinate_evaluations)


def run_failed(reason: str) -> None:
    _init_metrics()
    if RUN_FAILURES_TOTAL is not None:
        RUN_FAILURES_TOTAL.labels(reason=reason).inc()


def experiment_started(experiment: str) -> float:
    _init_metrics()
    return time.perf_counter()


def experiment_finished(experiment: str, start_time: float) -> None:
    _init_metrics()
    if EXPERIMENT_DURATION_SECONDS is not None:
        EXPERIMENT_DURATION_SECONDS.labels(experiment=experiment).observe(
            time.perf_counter() - start_time
        )


def write_metrics(path: Path) -> Path:
    _init_metrics()
    write_to_textfile(str(path), get_registry())
    return path
