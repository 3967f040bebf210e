"""
Experiment drivers.

Each experiment builds the problem from its config, runs replicates and stages
CSV tables plus summary key-values on an ExperimentArtifacts, which is written
once at the end. Every CSV except the timing tables is a pure function of
(config, seed).
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
import structlog

from .. import metrics
from ..app_logging import bind_experiment_context, clear_experiment_context
from ..asymptotics import (
    asymptotics_report,
    clt_replicate,
    density_table,
    gamma_table,
    matrix_frame,
    monte_carlo_stream,
    mse_slope,
    resolve_iid_sampler,
    rho_check,
    sample_covariance,
    terminal_samples,
)
from ..directions import DirectionKind, DirectionSampler, fourth_moment, second_moment_check
from ..errors import ConfigValidationError, ScorsNumericalError
from ..objectives import (
    FiniteSumObjective,
    LogisticObjective,
    ReferenceOptimum,
    empirical_optimum,
    export_dataset_csv,
    load_dataset_csv,
    make_noisy_quadratic,
    strong_monotonicity_constant,
    synthesize_logistic,
)
from ..optimizer import (
    SGD,
    InitPolicy,
    NuPolicy,
    RunTrace,
    SnapshotPolicy,
    StepSchedule,
    build_sampler,
    coordinate_cost,
    run_method,
    snapshot_grid,
    static_nu_sampler,
    step_condition_warnings,
    traces_to_frame,
    unbiasedness_check,
)
from ..workers import ReplicateJob, run_replicates
from .artifacts import ExperimentArtifacts
from .config import ExperimentConfig

logger = structlog.get_logger(__name__)

ITERATIONS_PER_EPOCH = 1000
CLT_TOLERANCE = 0.15
GAMMA_TOLERANCE = 0.02
REDUCTION_FACTOR = 10.0
UNBIASEDNESS_DRAWS = 100_000
# Published per-iteration CPU times (seconds) for the N=50000, d=50 logistic problem
REFERENCE_SECONDS_PER_ITERATION = {
    "U": 4.98e-6,
    "SGD": 5.05e-6,
    "NU": 12.01e-6,
    "G": 6.48e-6,
    "S": 8.92e-6,
}


@dataclass(frozen=True)
class Problem:
    obj: FiniteSumObjective
    reference: ReferenceOptimum
    mu: Optional[float]


def build_problem(config: ExperimentConfig) -> Problem:
    if config.family == "quadratic":
        obj, ref = make_noisy_quadratic(
            config.d,
            (config.eig_lo, config.eig_hi),
            config.noise_scale,
            config.N,
            config.seed,
            whiten_noise=config.whiten_noise,
        )
        return Problem(obj, ref, strong_monotonicity_constant(obj))

    if config.dataset is not None:
        loaded = load_dataset_csv(config.dataset)
        if loaded.dim != config.d:
            raise ConfigValidationError(f"dataset has d={loaded.dim}, config says d={config.d}")
        if config.reference == "generator":
            raise ConfigValidationError("a loaded dataset has no generator parameter, use reference = empirical")
        return Problem(loaded, empirical_optimum(loaded), None)

    obj, ref = synthesize_logistic(config.N, config.d, config.seed, refine=config.reference == "empirical")
    return Problem(obj, ref, None)


def validate_step_conditions(config: ExperimentConfig, mu: Optional[float], p: int = 1) -> List[str]:
    """Warnings for the rate-bound step conditions; silent when mu is unknown."""
    found = step_condition_warnings(config.c, config.alpha, mu, p)
    for warning in found:
        logger.warning("step_condition_violated", condition=warning, c=config.c, alpha=config.alpha, mu=mu, p=p)
    return found


def _schedule(config: ExperimentConfig) -> StepSchedule:
    return StepSchedule(config.c, config.alpha, config.step_offset)


def _init(config: ExperimentConfig) -> InitPolicy:
    return InitPolicy(config.init, config.init_radius)


def _sampler(config: ExperimentConfig, method: str) -> Optional[DirectionSampler]:
    if method == SGD:
        return None
    return build_sampler(DirectionKind(method), config.d, config.prob_floor)


def _iterations_for(config: ExperimentConfig, method: str) -> int:
    if config.budget is None:
        return config.iterations
    iterations = config.budget // coordinate_cost(method, config.d)
    if iterations < 1:
        raise ConfigValidationError(f"budget {config.budget} is below one {method} iteration ({config.d} coordinates)")
    return iterations


def gap_at_cost(trace: RunTrace, cost: int) -> float:
    """Relative gap at the last snapshot whose cumulative cost does not exceed `cost`."""
    index = int(np.searchsorted(trace.cumulative_cost, cost, side="right")) - 1
    if index < 0:
        return 1.0
    return float(trace.relative_gap[index])


def run_convergence(config: ExperimentConfig, problem: Problem, artifacts: ExperimentArtifacts) -> None:
    """Relative optimality gap against cumulative coordinate cost, per method and replicate."""
    traces: Dict[str, List[RunTrace]] = {}
    finals = []
    for method in config.samplers:
        iterations = _iterations_for(config, method)
        jobs = [
            ReplicateJob(
                obj=problem.obj,
                reference=problem.reference,
                method=method,
                schedule=_schedule(config),
                iterations=iterations,
                seed=config.seed,
                replicate=r,
                snapshot_policy=SnapshotPolicy(count=config.snapshots),
                nu_policy=NuPolicy(config.nu_mode),
                init=_init(config),
                prob_floor=config.prob_floor,
            )
            for r in range(config.replicates)
        ]
        method_traces = run_replicates(jobs, config.workers)
        traces[method] = method_traces
        artifacts.add_frame("curve", f"convergence_{method}.csv", traces_to_frame(method_traces))
        artifacts.add_trace("trace", f"trace_{method}.csv", method_traces[0])

        gaps = np.array([trace.final_relative_gap for trace in method_traces])
        for trace in method_traces:
            finals.append(
                {
                    "method": method,
                    "replicate": trace.replicate,
                    "iterations": trace.total_iterations,
                    "cumulative_cost": int(trace.cumulative_cost[-1]),
                    "setup_cost": trace.setup_cost,
                    "initial_dist": trace.initial_dist,
                    "final_dist": float(trace.dist[-1]),
                    "final_relative_gap": trace.final_relative_gap,
                }
            )
        artifacts.update(
            {
                f"{method}.iterations": iterations,
                f"{method}.coordinate_cost": iterations * coordinate_cost(method, config.d),
                f"{method}.setup_cost": method_traces[0].setup_cost,
                f"{method}.median_final_relative_gap": float(np.median(gaps)),
                f"{method}.reduced_10x": int(np.sum(gaps <= 1.0 / REDUCTION_FACTOR)),
            }
        )
        logger.info("method_converged", method=method, median_gap=float(np.median(gaps)))

    artifacts.add_frame("final_gaps", "final_gaps.csv", pd.DataFrame(finals))
    if "U" in traces and "SGD" in traces:
        common_cost = min(
            int(traces["U"][0].cumulative_cost[-1]),
            int(traces["SGD"][0].cumulative_cost[-1]),
        )
        wins = sum(
            gap_at_cost(u, common_cost) <= gap_at_cost(s, common_cost)
            for u, s in zip(traces["U"], traces["SGD"])
        )
        artifacts.update({"U_le_SGD.count": int(wins), "U_le_SGD.common_cost": common_cost})


def run_clt(config: ExperimentConfig, problem: Problem, artifacts: ExperimentArtifacts) -> None:
    """Replicated sqrt(n)(X_n - x*) against the predicted covariance, per method."""
    rho, _ = rho_check(problem.obj.hessian_at(problem.reference.x_star))
    admissible = config.c * rho > 0.5
    artifacts.update({"rho": rho, "admissible": admissible})
    schedule = _schedule(config)
    init = _init(config)
    nu_policy = NuPolicy(config.nu_mode)

    for method in config.samplers:
        sampler = _sampler(config, method)
        if admissible:
            comparison = clt_replicate(
                problem.obj,
                problem.reference,
                sampler,
                schedule,
                config.iterations,
                config.replicates,
                config.seed,
                nu_policy=nu_policy,
                init=init,
                workers=config.workers,
            )
            artifacts.add_frame("clt_terminal", f"clt_{method}_terminal.csv", comparison.terminal_frame())
            artifacts.add_frame("clt_sample_cov", f"clt_{method}_sample_cov.csv", matrix_frame(comparison.sample_cov))
            artifacts.add_frame("clt_sigma", f"clt_{method}_sigma.csv", matrix_frame(comparison.predicted_sigma))
            artifacts.add_frame("clt_density", f"clt_{method}_density.csv", comparison.density)
            artifacts.update(
                {
                    f"{method}.rel_frobenius_error": comparison.rel_frobenius_error,
                    f"{method}.within_tolerance": comparison.rel_frobenius_error <= CLT_TOLERANCE,
                    f"{method}.norm_std": comparison.norm_std,
                    f"{method}.sample_cov_11": float(comparison.sample_cov[0, 0]),
                    f"{method}.sigma_11": float(comparison.predicted_sigma[0, 0]),
                }
            )
            continue

        # No predicted covariance exists; the replicate statistics are still reported
        logger.warning("clt_without_prediction", method=method, rho=rho, c=config.c)
        resolved = resolve_iid_sampler(problem.obj, sampler, nu_policy, init, config.seed)
        terminal = terminal_samples(
            problem.obj,
            problem.reference,
            resolved,
            schedule,
            config.iterations,
            config.replicates,
            config.seed,
            init=init,
            workers=config.workers,
        )
        sample_cov = sample_covariance(terminal)
        frame = pd.DataFrame(terminal, columns=[f"z_{j + 1}" for j in range(config.d)])
        frame.insert(0, "replicate", np.arange(config.replicates, dtype=np.int64))
        artifacts.add_frame("clt_terminal", f"clt_{method}_terminal.csv", frame)
        artifacts.add_frame("clt_sample_cov", f"clt_{method}_sample_cov.csv", matrix_frame(sample_cov))
        scale = math.sqrt(float(sample_cov[0, 0])) if sample_cov[0, 0] > 0.0 else 1.0
        artifacts.add_frame("clt_density", f"clt_{method}_density.csv", density_table(terminal[:, 0], scale))
        artifacts.update(
            {
                f"{method}.norm_std": float(np.std(np.linalg.norm(terminal, axis=1), ddof=1)),
                f"{method}.sample_cov_11": float(sample_cov[0, 0]),
            }
        )


def run_mse(config: ExperimentConfig, problem: Problem, artifacts: ExperimentArtifacts) -> None:
    """Mean L^{2p} error on a log-spaced grid and its fitted log-log slope, per method."""
    grid = snapshot_grid(config.iterations, config.grid_points)
    expected = -config.moment_order * config.alpha
    tolerance = 0.15 if config.moment_order == 1 else 0.3
    for method in config.samplers:
        result = mse_slope(
            problem.obj,
            problem.reference,
            _sampler(config, method),
            _schedule(config),
            config.moment_order,
            grid,
            config.replicates,
            config.seed,
            nu_policy=NuPolicy(config.nu_mode),
            init=_init(config),
            workers=config.workers,
        )
        artifacts.add_frame("mse", f"mse_{method}.csv", result.to_frame(ITERATIONS_PER_EPOCH))
        artifacts.update(
            {
                f"{method}.slope": result.slope,
                f"{method}.expected_slope": expected,
                f"{method}.slope_within_tolerance": abs(result.slope - expected) <= tolerance,
                f"{method}.slope_at_most_expected": result.slope <= expected + tolerance,
                f"{method}.exact_convergence": math.isinf(result.slope),
                f"{method}.fit_start": result.fit_start,
                f"{method}.step_condition_warnings": len(result.warnings),
            }
        )


def _frozen_point(problem: Problem) -> np.ndarray:
    return problem.reference.x_star + np.full(problem.obj.dim, 1.0 / math.sqrt(problem.obj.dim))


def run_gamma_check(config: ExperimentConfig, problem: Problem, artifacts: ExperimentArtifacts) -> None:
    """Closed-form against Monte Carlo Gamma, plus sampler diagnostics and unbiasedness, per method."""
    init_point = _init(config).initial_point(config.d, config.seed, 0)
    samplers: List[Optional[DirectionSampler]] = []
    for method in config.samplers:
        sampler = _sampler(config, method)
        if sampler is not None and sampler.kind is DirectionKind.NON_UNIFORM:
            sampler = static_nu_sampler(problem.obj, init_point, config.prob_floor)
        samplers.append(sampler)

    reports = []
    diagnostics = []
    frozen = _frozen_point(problem)
    for index, (method, sampler) in enumerate(zip(config.samplers, samplers)):
        report = asymptotics_report(
            problem.obj,
            problem.reference,
            sampler,
            config.mc_draws,
            monte_carlo_stream(config.seed, index),
            step_constant=config.c,
        )
        reports.append(report)
        artifacts.update(report.summary())
        artifacts.record(f"{method}.gamma_within_tolerance", report.mc_relative_error <= GAMMA_TOLERANCE)
        if report.sigma is not None:
            artifacts.add_frame("sigma", f"sigma_{method}.csv", matrix_frame(report.sigma))

        moment_rng = monte_carlo_stream(config.seed, len(config.samplers) + index)
        second_moment_error = 0.0 if sampler is None else second_moment_check(sampler, config.mc_draws, moment_rng)
        diagnostics.append(
            {
                "method": method,
                "second_moment_error": second_moment_error,
                "fourth_moment": float("nan") if sampler is None else fourth_moment(sampler),
                "unbiasedness_rel_error": unbiasedness_check(
                    problem.obj,
                    sampler,
                    frozen,
                    UNBIASEDNESS_DRAWS,
                    monte_carlo_stream(config.seed, 2 * len(config.samplers) + index),
                ),
            }
        )

    artifacts.add_frame("gamma", "gamma_check.csv", gamma_table(reports[0].q, samplers, config.mc_draws, config.seed))
    artifacts.add_frame("diagnostics", "sampler_diagnostics.csv", pd.DataFrame(diagnostics))
    artifacts.add_frame("q", "q_matrix.csv", matrix_frame(reports[0].q))
    artifacts.add_frame("hessian", "hessian.csv", matrix_frame(reports[0].h))
    artifacts.update({"rho": reports[0].rho, "admissible": reports[0].admissible})


def timing_bench(config: ExperimentConfig, problem: Problem) -> pd.DataFrame:
    """
    Median seconds per iteration over `timing_repetitions` runs per method,
    after an excluded warm-up run, with ratios to U and the reference row.
    Always sequential and in-process.
    """
    measured: Dict[str, float] = {}
    schedule = _schedule(config)
    for method in config.samplers:
        common = dict(
            reference=problem.reference,
            nu_policy=NuPolicy(config.nu_mode),
            init=_init(config),
            prob_floor=config.prob_floor,
        )
        if config.warmup > 0:
            run_method(problem.obj, method, schedule, config.warmup, config.seed, SnapshotPolicy.final_only(), **common)
        times = [
            run_method(
                problem.obj,
                method,
                schedule,
                config.iterations,
                config.seed,
                SnapshotPolicy.final_only(),
                replicate=rep,
                **common,
            ).wall_time_per_iteration
            for rep in range(config.timing_repetitions)
        ]
        measured[method] = float(statistics.median(times))
        logger.info("method_timed", method=method, seconds_per_iteration=measured[method])

    rows = []
    for source, table in (("measured", measured), ("reference", REFERENCE_SECONDS_PER_ITERATION)):
        base = table.get("U")
        for method in config.samplers:
            if method not in table:
                continue
            seconds = table[method]
            rows.append(
                {
                    "source": source,
                    "method": method,
                    "seconds_per_iteration": seconds,
                    "ratio_to_U": seconds / base if base else float("nan"),
                }
            )
    return pd.DataFrame(rows, columns=["source", "method", "seconds_per_iteration", "ratio_to_U"])


def run_timing(config: ExperimentConfig, problem: Problem, artifacts: ExperimentArtifacts) -> None:
    table = timing_bench(config, problem)
    artifacts.add_frame("timing", "timing.csv", table)
    measured = table[table["source"] == "measured"].set_index("method")["seconds_per_iteration"]
    for method, seconds in measured.items():
        artifacts.record(f"{method}.seconds_per_iteration", float(seconds))
    if "U" in measured.index and "NU" in measured.index:
        artifacts.record("U_faster_than_NU", bool(measured["U"] < measured["NU"]))


EXPERIMENTS: Dict[str, Callable[[ExperimentConfig, Problem, ExperimentArtifacts], None]] = {
    "convergence": run_convergence,
    "clt": run_clt,
    "mse": run_mse,
    "gamma_check": run_gamma_check,
    "timing": run_timing,
}


def run_experiment(config: ExperimentConfig) -> ExperimentArtifacts:
    """
    Run one experiment end to end and write its artifacts.

    Raises:
        ScorsValidationError: invalid configuration or precondition
        ScorsNumericalError: numerical failure; no partial artifacts are left behind
    """
    bind_experiment_context(experiment=config.experiment, family=config.family, seed=config.seed)
    started = metrics.experiment_started(config.experiment)
    artifacts = ExperimentArtifacts(config.resolved_output_dir())
    logger.info("experiment_started", output_dir=str(artifacts.output_dir), samplers=list(config.samplers))
    try:
        problem = build_problem(config)
        artifacts.update(
            {
                "experiment": config.experiment,
                "family": config.family,
                "N": problem.obj.n_components,
                "d": problem.obj.dim,
                "seed": config.seed,
                "c": config.c,
                "alpha": config.alpha,
                "replicates": config.replicates,
                "reference_source": problem.reference.source.value,
                "reference_gradient_norm": problem.reference.gradient_norm_at_x_star,
                "nu_mode": config.nu_mode,
            }
        )
        if problem.mu is not None:
            artifacts.record("mu", problem.mu)
        artifacts.record("lipschitz_at_optimum", problem.obj.lipschitz_at_optimum)
        artifacts.update({f"schedule.{key}": value for key, value in _schedule(config).admissibility().items()})
        warnings = validate_step_conditions(config, problem.mu, config.moment_order)
        artifacts.record("step_condition_warnings", len(warnings))
        obj = problem.obj
        if config.export_dataset and isinstance(obj, LogisticObjective):
            artifacts.add_export("dataset", "dataset.csv", lambda path: export_dataset_csv(obj, path))

        EXPERIMENTS[config.experiment](config, problem, artifacts)
        metrics.experiment_finished(config.experiment, started)
        artifacts.finalize()
    except Exception as e:
        metrics.run_failed(type(e).__name__)
        logger.error("experiment_failed", error=str(e), error_type=type(e).__name__)
        artifacts.discard()
        if isinstance(e, np.linalg.LinAlgError):
            raise ScorsNumericalError(f"linear algebra failure: {e}") from e
        raise
    finally:
        clear_experiment_context()
    logger.info("experiment_finished", output_dir=str(artifacts.output_dir))
    return artifacts
