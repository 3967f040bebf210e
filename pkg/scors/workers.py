"""
Replicate fan-out.

Independent replicates run in a process pool when more than one worker is
requested. Results come back in submission order, so aggregates do not depend
on the worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import structlog

from . import metrics
from .directions import DirectionSampler
from .errors import DivergenceError, ScorsError
from .objectives import FiniteSumObjective, ReferenceOptimum
from .optimizer import (
    InitPolicy,
    MethodLike,
    NuPolicy,
    RunTrace,
    SnapshotPolicy,
    StepSchedule,
    run_method,
)

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class ReplicateJob:
    obj: FiniteSumObjective
    reference: ReferenceOptimum
    method: MethodLike
    schedule: StepSchedule
    iterations: int
    seed: int
    replicate: int
    snapshot_policy: Optional[SnapshotPolicy] = None
    nu_policy: NuPolicy = NuPolicy.STATIC
    init: Optional[InitPolicy] = None
    sampler: Optional[DirectionSampler] = None
    prob_floor: Optional[float] = None


def execute_job(job: ReplicateJob) -> RunTrace:
    return run_method(
        job.obj,
        job.method,
        job.schedule,
        job.iterations,
        job.seed,
        job.snapshot_policy,
        reference=job.reference,
        replicate=job.replicate,
        nu_policy=job.nu_policy,
        init=job.init,
        sampler=job.sampler,
        prob_floor=job.prob_floor,
    )


def run_replicates(jobs: Sequence[ReplicateJob], workers: int = 1) -> List[RunTrace]:
    """
    Execute jobs and return their traces in job order.

    With workers > 1 the jobs go to a ProcessPoolExecutor; run counters are then
    updated here from the returned traces because the children own separate
    registries.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    if workers == 1 or len(jobs) <= 1:
        return [execute_job(job) for job in jobs]

    logger.info("replicate_pool_started", jobs=len(jobs), workers=workers)
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        futures = [pool.submit(execute_job, job) for job in jobs]
        traces: List[RunTrace] = []
        for job, future in zip(jobs, futures):
            try:
                trace = future.result()
            except DivergenceError:
                metrics.run_failed("divergence")
                raise
            except ScorsError as e:
                metrics.run_failed(type(e).__name__)
                logger.error("replicate_failed", replicate=job.replicate, error=str(e))
                raise
            metrics.run_completed(
                trace.method, trace.total_iterations, trace.total_iterations * trace.cost_per_iteration
            )
            traces.append(trace)
    logger.info("replicate_pool_finished", jobs=len(jobs))
    return traces
