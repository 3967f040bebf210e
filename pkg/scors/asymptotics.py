"""
Asymptotic analysis of SCORS.

Closed-form and Monte Carlo noise matrices Gamma = E[V V^T Q V V^T], the
limiting covariance Sigma of sqrt(n)(X_n - x*) from the transposed Lyapunov
equation, the rho > 1/2 admissibility check, CLT replication and the
log-log fit of the L^{2p} error decay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from scipy import stats

from . import rng as rng_streams
from .directions import DirectionKind, DirectionSampler, draw_coordinates, draw_dense
from .errors import (
    AdaptiveSamplerNotIID,
    InvalidSchedule,
    MissingProbs,
    RhoTooSmall,
    ScorsValidationError,
)
from .numkit import (
    as_dense,
    check_symmetric,
    frobenius_relative_error,
    lyapunov_residual,
    solve_lyapunov_transposed,
    sym_eig,
    symmetrize,
)
from .objectives import FiniteSumObjective, ReferenceOptimum, q_matrix, strong_monotonicity_constant
from .optimizer import (
    SGD,
    InitPolicy,
    MethodLike,
    NuPolicy,
    RunTrace,
    SnapshotPolicy,
    StepSchedule,
    final_iterates,
    method_name,
    static_nu_sampler,
    step_condition_warnings,
)
from .workers import ReplicateJob, run_replicates

logger = structlog.get_logger(__name__)

RHO_MARGIN = 1e-12
GAMMA_MC_MIN_DRAWS = 100_000
GAMMA_MC_BLOCK = 16384
DENSITY_BINS = 30
DENSITY_RANGE = 4.0


def _method_of(kind: MethodLike) -> MethodLike:
    return SGD if kind == SGD else DirectionKind(kind)


def gamma_closed_form(kind: MethodLike, q: object, probs: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Gamma for each direction law:
    U: d diag(Q); NU: diag(Q_jj / p_j); G: 2Q + tr(Q) I; S: d/(d+2) (2Q + tr(Q) I).
    The SGD baseline uses V V^T = I, so Gamma = Q.

    Raises:
        MissingProbs: for NU without probabilities
    """
    q_mat = as_dense(q, square=True, name="Q")
    check_symmetric(q_mat, tol=1e-12 * max(1.0, float(np.max(np.abs(q_mat)))), name="Q")
    d = q_mat.shape[0]
    method = _method_of(kind)
    if method == SGD:
        return q_mat.copy()
    if method is DirectionKind.UNIFORM:
        return np.diag(d * np.diag(q_mat))
    if method is DirectionKind.NON_UNIFORM:
        if probs is None:
            raise MissingProbs("NU closed form needs the coordinate probabilities")
        p = np.asarray(probs, dtype=np.float64)
        if p.shape != (d,) or np.any(p <= 0.0):
            raise ScorsValidationError(f"probs must be {d} strictly positive values")
        return np.diag(np.diag(q_mat) / p)
    gaussian = 2.0 * q_mat + np.trace(q_mat) * np.eye(d)
    if method is DirectionKind.GAUSSIAN:
        return gaussian
    return (d / (d + 2.0)) * gaussian


def gamma_monte_carlo(
    sampler: Optional[DirectionSampler],
    q: object,
    draws: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Empirical mean of <V, Q V> V V^T over `draws` directions, symmetrised."""
    if draws < GAMMA_MC_MIN_DRAWS:
        raise ScorsValidationError(f"gamma_monte_carlo needs draws >= 10^5, got {draws}")
    q_mat = as_dense(q, square=True, name="Q")
    if sampler is None:
        return q_mat.copy()
    d = q_mat.shape[0]
    if sampler.dim != d:
        raise ScorsValidationError(f"sampler dim {sampler.dim} != Q dim {d}")

    total = np.zeros((d, d))
    remaining = draws
    while remaining > 0:
        size = min(GAMMA_MC_BLOCK, remaining)
        if sampler.is_canonical:
            # V = s_j e_j gives s_j^4 Q_jj e_j e_j^T
            coords = draw_coordinates(sampler, rng, size)
            scales_sq = sampler.squared_scales()
            weights = scales_sq[coords] ** 2 * np.diag(q_mat)[coords]
            total[np.diag_indices(d)] += np.bincount(coords, weights=weights, minlength=d)
        else:
            block = draw_dense(sampler, rng, size)
            quad = np.einsum("ij,ij->i", block @ q_mat, block)
            total += (block * quad[:, None]).T @ block
        remaining -= size
    return symmetrize(total / draws)


def rho_check(h: object) -> Tuple[float, bool]:
    """Smallest eigenvalue of the Hessian and whether it exceeds 1/2."""
    eig = sym_eig(h)
    rho = eig.min_eigenvalue
    return rho, rho > 0.5


def sigma_from_lyapunov(h: object, gamma: object, step_constant: float = 1.0) -> np.ndarray:
    """
    Limiting covariance of sqrt(n)(X_n - x*) for gamma_n = c/n.

    Solves (cH - I/2)^T S + S (cH - I/2) = c^2 Gamma.

    Raises:
        RhoTooSmall: if c * lambda_min(H) <= 1/2
    """
    h_mat = as_dense(h, square=True, name="H")
    if step_constant <= 0.0:
        raise InvalidSchedule(f"step constant must be positive, got {step_constant}")
    rho, _ = rho_check(h_mat)
    if step_constant * rho <= 0.5 + RHO_MARGIN:
        raise RhoTooSmall(rho, 0.5 / step_constant)
    a = step_constant * symmetrize(h_mat) - 0.5 * np.eye(h_mat.shape[0])
    g_mat = as_dense(gamma, square=True, name="Gamma")
    return solve_lyapunov_transposed(a, step_constant**2 * g_mat)


def stationarity_matrix(h: np.ndarray, step_constant: float = 1.0) -> np.ndarray:
    return step_constant * symmetrize(h) - 0.5 * np.eye(h.shape[0])


@dataclass(frozen=True)
class AsymptoticsReport:
    method: str
    h: np.ndarray
    rho: float
    admissible: bool
    q: np.ndarray
    gamma_closed: np.ndarray
    gamma_mc: np.ndarray
    mc_draws: int
    sigma: Optional[np.ndarray]
    step_constant: float = 1.0
    lyapunov_residual: Optional[float] = None
    mc_relative_error: float = float("nan")

    def summary(self) -> dict:
        out = {
            f"{self.method}.rho": self.rho,
            f"{self.method}.admissible": self.admissible,
            f"{self.method}.gamma_mc_rel_error": self.mc_relative_error,
            f"{self.method}.trace_q": float(np.trace(self.q)),
        }
        if self.sigma is not None:
            out[f"{self.method}.trace_sigma"] = float(np.trace(self.sigma))
            out[f"{self.method}.lyapunov_residual"] = self.lyapunov_residual
        return out


def asymptotics_report(
    obj: FiniteSumObjective,
    ref: ReferenceOptimum,
    sampler: Optional[DirectionSampler],
    mc_draws: int,
    rng: np.random.Generator,
    step_constant: float = 1.0,
) -> AsymptoticsReport:
    """H, rho, Q, closed-form and Monte Carlo Gamma and Sigma at the reference optimum; sampler=None is SGD."""
    h = obj.hessian_at(ref.x_star)
    q = q_matrix(obj, ref)
    rho, _ = rho_check(h)
    kind: MethodLike = SGD if sampler is None else sampler.kind
    probs = sampler.probs if sampler is not None else None
    gamma_closed = gamma_closed_form(kind, q, probs)
    gamma_mc = gamma_monte_carlo(sampler, q, mc_draws, rng)
    admissible = step_constant * rho > 0.5 + RHO_MARGIN

    sigma = None
    residual = None
    if admissible:
        sigma = sigma_from_lyapunov(h, gamma_closed, step_constant)
        residual = lyapunov_residual(stationarity_matrix(h, step_constant), sigma, step_constant**2 * gamma_closed)
    else:
        logger.warning("rho_not_admissible", method=method_name(kind), rho=rho, step_constant=step_constant)

    return AsymptoticsReport(
        method=method_name(kind),
        h=h,
        rho=rho,
        admissible=admissible,
        q=q,
        gamma_closed=gamma_closed,
        gamma_mc=gamma_mc,
        mc_draws=mc_draws,
        sigma=sigma,
        step_constant=step_constant,
        lyapunov_residual=residual,
        mc_relative_error=frobenius_relative_error(gamma_mc, gamma_closed),
    )


@dataclass(frozen=True)
class CltComparison:
    """sqrt(n)(X_n - x*) over R replicates against the predicted Sigma"""
    method: str
    n: int
    replicates: int
    sample_cov: np.ndarray
    predicted_sigma: np.ndarray
    rel_frobenius_error: float
    terminal: np.ndarray = field(repr=False)
    norm_std: float = float("nan")
    density: pd.DataFrame = field(default_factory=pd.DataFrame, repr=False)

    def terminal_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.terminal, columns=[f"z_{j + 1}" for j in range(self.terminal.shape[1])])
        frame.insert(0, "replicate", np.arange(self.replicates, dtype=np.int64))
        return frame


def density_table(values: np.ndarray, scale: float, bins: int = DENSITY_BINS) -> pd.DataFrame:
    """Histogram density of values/scale on [-4, 4] next to the standard normal density."""
    standardized = values / scale
    density, edges = np.histogram(standardized, bins=bins, range=(-DENSITY_RANGE, DENSITY_RANGE), density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return pd.DataFrame(
        {
            "bin_left": edges[:-1],
            "bin_right": edges[1:],
            "bin_center": centers,
            "empirical_density": density,
            "normal_density": stats.norm.pdf(centers),
        }
    )


def resolve_iid_sampler(
    obj: FiniteSumObjective,
    sampler: Optional[DirectionSampler],
    nu_policy: NuPolicy,
    init: InitPolicy,
    base_seed: int,
) -> Optional[DirectionSampler]:
    if sampler is None or sampler.kind is not DirectionKind.NON_UNIFORM:
        return sampler
    if nu_policy is NuPolicy.ADAPTIVE:
        raise AdaptiveSamplerNotIID("adaptive NU directions are not i.i.d.; use the static or fixed policy")
    if nu_policy is NuPolicy.STATIC:
        return static_nu_sampler(obj, init.initial_point(obj.dim, base_seed, 0), sampler.prob_floor)
    return sampler


def terminal_samples(
    obj: FiniteSumObjective,
    ref: ReferenceOptimum,
    sampler: Optional[DirectionSampler],
    schedule: StepSchedule,
    n: int,
    replicates: int,
    base_seed: int,
    *,
    init: Optional[InitPolicy] = None,
    workers: int = 1,
) -> np.ndarray:
    """sqrt(n)(X_n - x*) for each replicate, one row per replicate, directions i.i.d."""
    kind: MethodLike = SGD if sampler is None else sampler.kind
    jobs = [
        ReplicateJob(
            obj=obj,
            reference=ref,
            method=kind,
            schedule=schedule,
            iterations=n,
            seed=base_seed,
            replicate=r,
            snapshot_policy=SnapshotPolicy.final_only(),
            nu_policy=NuPolicy.FIXED,
            init=init,
            sampler=sampler,
        )
        for r in range(replicates)
    ]
    traces = run_replicates(jobs, workers)
    return math.sqrt(n) * (final_iterates(traces) - ref.x_star)


def sample_covariance(terminal: np.ndarray) -> np.ndarray:
    return symmetrize(np.atleast_2d(np.cov(terminal, rowvar=False)))


def clt_replicate(
    obj: FiniteSumObjective,
    ref: ReferenceOptimum,
    sampler: Optional[DirectionSampler],
    schedule: StepSchedule,
    n: int,
    replicates: int,
    base_seed: int,
    *,
    nu_policy: NuPolicy = NuPolicy.STATIC,
    init: Optional[InitPolicy] = None,
    workers: int = 1,
) -> CltComparison:
    """
    Run `replicates` independent runs of `n` iterations and compare the sample
    covariance of sqrt(n)(X_n - x*) with Sigma. sampler=None runs SGD.

    Static NU probabilities are resolved once at the replicate-0 start point and
    then held fixed, so every replicate uses the same i.i.d. direction law.

    Raises:
        InvalidSchedule: unless alpha = 1
        AdaptiveSamplerNotIID: for the adaptive NU policy
        RhoTooSmall: if c * rho <= 1/2
    """
    if schedule.alpha != 1.0:
        raise InvalidSchedule(f"the CLT comparison needs gamma_n = c/n (alpha = 1), got alpha={schedule.alpha}")
    if replicates < 2:
        raise ScorsValidationError(f"need at least 2 replicates, got {replicates}")
    init = init or InitPolicy()
    sampler = resolve_iid_sampler(obj, sampler, NuPolicy(nu_policy), init, base_seed)
    kind: MethodLike = SGD if sampler is None else sampler.kind
    method = method_name(kind)

    h = obj.hessian_at(ref.x_star)
    gamma = gamma_closed_form(kind, q_matrix(obj, ref), sampler.probs if sampler is not None else None)
    sigma = sigma_from_lyapunov(h, gamma, schedule.c)

    terminal = terminal_samples(obj, ref, sampler, schedule, n, replicates, base_seed, init=init, workers=workers)
    sample_cov = sample_covariance(terminal)
    norms = np.linalg.norm(terminal, axis=1)
    error = frobenius_relative_error(sample_cov, sigma)
    logger.info("clt_compared", method=method, n=n, replicates=replicates, rel_frobenius_error=error)
    return CltComparison(
        method=method,
        n=n,
        replicates=replicates,
        sample_cov=sample_cov,
        predicted_sigma=sigma,
        rel_frobenius_error=error,
        terminal=terminal,
        norm_std=float(np.std(norms, ddof=1)),
        density=density_table(terminal[:, 0], math.sqrt(float(sigma[0, 0])) if sigma[0, 0] > 0.0 else 1.0),
    )


@dataclass(frozen=True)
class MseSlopeResult:
    method: str
    moment_order: int
    grid: np.ndarray
    mean_moment: np.ndarray
    slope: float
    intercept: float
    fit_start: int
    warnings: List[str] = field(default_factory=list)

    def to_frame(self, iterations_per_epoch: int = 1000) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "n": self.grid.astype(np.int64),
                "epoch": self.grid / iterations_per_epoch,
                "mean_moment": self.mean_moment,
                "fitted": np.exp(self.intercept) * self.grid.astype(np.float64) ** self.slope,
            }
        )


def fit_log_slope(grid: np.ndarray, values: np.ndarray) -> Tuple[float, float, int]:
    """
    Least-squares slope of log(values) against log(n) over n >= 10 * grid[0].

    The first decade of the grid is a transient and is left out when at least
    two points remain. Grid points where the moment is exactly zero (the
    iterate sits on x*) carry no rate information and are dropped; with fewer
    than two positive points left the slope is -inf.
    """
    grid = np.asarray(grid, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    positive = values > 0.0
    if int(positive.sum()) < 2:
        return float("-inf"), float("-inf"), int(grid[0])
    grid, values = grid[positive], values[positive]
    keep = grid >= 10.0 * grid[0]
    if int(keep.sum()) < 2:
        keep = np.ones_like(grid, dtype=bool)
    fit = stats.linregress(np.log(grid[keep]), np.log(values[keep]))
    return float(fit.slope), float(fit.intercept), int(grid[keep][0])


def mse_slope(
    obj: FiniteSumObjective,
    ref: ReferenceOptimum,
    sampler: Optional[DirectionSampler],
    schedule: StepSchedule,
    moment_order: int,
    n_grid: Sequence[int],
    replicates: int,
    base_seed: int,
    *,
    nu_policy: NuPolicy = NuPolicy.STATIC,
    init: Optional[InitPolicy] = None,
    workers: int = 1,
) -> MseSlopeResult:
    """
    Mean of ||X_n - x*||^(2p) over replicates on a log-spaced grid and its
    log-log slope. Violated step-size conditions are reported as warnings.
    """
    if moment_order < 1:
        raise ScorsValidationError(f"moment order must be >= 1, got {moment_order}")
    if replicates < 1:
        raise ScorsValidationError(f"need at least 1 replicate, got {replicates}")
    grid = np.array(sorted(set(int(n) for n in n_grid)), dtype=np.int64)
    if grid.size < 2 or grid[0] < 1:
        raise ScorsValidationError("n_grid needs at least two iteration counts >= 1")

    mu = strong_monotonicity_constant(obj)
    warnings = step_condition_warnings(schedule.c, schedule.alpha, mu, moment_order)
    for warning in warnings:
        logger.warning("step_condition_violated", condition=warning, moment_order=moment_order)

    kind: MethodLike = SGD if sampler is None else sampler.kind
    jobs = [
        ReplicateJob(
            obj=obj,
            reference=ref,
            method=kind,
            schedule=schedule,
            iterations=int(grid[-1]),
            seed=base_seed,
            replicate=r,
            snapshot_policy=SnapshotPolicy(iterations=tuple(int(n) for n in grid)),
            nu_policy=nu_policy,
            init=init,
            sampler=sampler,
        )
        for r in range(replicates)
    ]
    traces: List[RunTrace] = run_replicates(jobs, workers)
    moments = np.vstack([trace.dist_sq**moment_order for trace in traces])
    mean_moment = moments.mean(axis=0)
    slope, intercept, fit_start = fit_log_slope(grid, mean_moment)
    logger.info("mse_slope_fitted", method=method_name(kind), moment_order=moment_order, slope=slope)
    return MseSlopeResult(
        method=method_name(kind),
        moment_order=moment_order,
        grid=grid,
        mean_moment=mean_moment,
        slope=slope,
        intercept=intercept,
        fit_start=fit_start,
        warnings=warnings,
    )


def matrix_frame(matrix: np.ndarray, prefix: str = "c") -> pd.DataFrame:
    """Square matrix as a frame with 1-based row and column labels."""
    d = matrix.shape[0]
    frame = pd.DataFrame(matrix, columns=[f"{prefix}{j + 1}" for j in range(d)])
    frame.insert(0, "row", np.arange(1, d + 1, dtype=np.int64))
    return frame


def monte_carlo_stream(seed: int, replicate: int = 0) -> np.random.Generator:
    return rng_streams.stream(seed, replicate, rng_streams.MONTE_CARLO)


def gamma_table(
    q: np.ndarray,
    samplers: Sequence[Union[DirectionSampler, None]],
    draws: int,
    seed: int,
) -> pd.DataFrame:
    """Closed-form versus Monte Carlo Gamma per method; one row per (method, i, j)."""
    rows = []
    for index, sampler in enumerate(samplers):
        kind: MethodLike = SGD if sampler is None else sampler.kind
        closed = gamma_closed_form(kind, q, sampler.probs if sampler is not None else None)
        mc = gamma_monte_carlo(sampler, q, draws, monte_carlo_stream(seed, index))
        d = closed.shape[0]
        for i in range(d):
            for j in range(d):
                rows.append(
                    {
                        "method": method_name(kind),
                        "i": i + 1,
                        "j": j + 1,
                        "closed_form": closed[i, j],
                        "monte_carlo": mc[i, j],
                    }
                )
    return pd.DataFrame(rows, columns=["method", "i", "j", "closed_form", "monte_carlo"])
