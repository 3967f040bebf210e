"""
SCORS iteration and SGD baseline.

X_{n+1} = X_n - gamma_n V V^T grad f_U(X_n) with U uniform on the components
and V drawn from a direction law with E[V V^T] = I_d. The update is applied in
factored form x - gamma <v, g> v; canonical directions only touch one
coordinate and only need one gradient coordinate.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from . import metrics
from . import rng as rng_streams
from .directions import (
    DirectionKind,
    DirectionSampler,
    DirectionVector,
    draw_coordinates,
    draw_dense,
    nu_probabilities_from_gradient,
    pick_coordinate,
)
from .errors import DivergenceError, InvalidSchedule, ScorsValidationError
from .objectives import FiniteSumObjective, ReferenceOptimum

logger = structlog.get_logger(__name__)

SGD = "SGD"
DIVERGENCE_GUARD = 1e9
DEFAULT_SNAPSHOTS = 200
# Component indices and directions are pre-drawn in blocks of this size
DRAW_BLOCK = 4096

MethodLike = Union[DirectionKind, str]


@dataclass(frozen=True)
class StepSchedule:
    """
    gamma_n = c / (n + offset)^alpha with 1/2 < alpha <= 1.

    A positive offset damps the first steps without changing the asymptotic
    rate or the limiting covariance.
    """
    c: float = 1.0
    alpha: float = 1.0
    offset: int = 0

    def __post_init__(self) -> None:
        if not (self.c > 0.0 and math.isfinite(self.c)):
            raise InvalidSchedule(f"step constant c must be positive, got {self.c}")
        if not 0.5 < self.alpha <= 1.0:
            raise InvalidSchedule(
                f"alpha must lie in (1/2, 1] so that sum gamma_n diverges and sum gamma_n^2 converges, "
                f"got {self.alpha}"
            )
        if self.offset < 0:
            raise InvalidSchedule(f"step offset must be >= 0, got {self.offset}")

    def admissibility(self) -> dict:
        return {
            "c": self.c,
            "alpha": self.alpha,
            "offset": self.offset,
            "sum_gamma_diverges": self.alpha <= 1.0,
            "sum_gamma_squared_converges": self.alpha > 0.5,
        }


def step_size(schedule: StepSchedule, n: int) -> float:
    if n < 1:
        raise ScorsValidationError(f"iteration index must be >= 1, got {n}")
    return schedule.c * (n + schedule.offset) ** (-schedule.alpha)


def step_condition_warnings(c: float, alpha: float, mu: Optional[float], p: int = 1) -> List[str]:
    """
    Constant conditions of the non-asymptotic rate bounds.

    p = 1: c mu <= 2^(alpha-1), and 2 c mu > 1 when alpha = 1.
    p >= 2: p c mu <= 2^alpha, and c mu > 1 when alpha = 1.
    Silent when mu is unknown.
    """
    if mu is None:
        return []
    found: List[str] = []
    if p <= 1:
        if not c * mu <= 2.0 ** (alpha - 1.0):
            found.append(f"c*mu <= 2^(alpha-1) violated ({c * mu:.6g} > {2.0 ** (alpha - 1.0):.6g})")
        if alpha == 1.0 and not 2.0 * c * mu > 1.0:
            found.append(f"2*c*mu > 1 violated ({2.0 * c * mu:.6g} <= 1)")
    else:
        if not p * c * mu <= 2.0**alpha:
            found.append(f"p*c*mu <= 2^alpha violated ({p * c * mu:.6g} > {2.0 ** alpha:.6g})")
        if alpha == 1.0 and not c * mu > 1.0:
            found.append(f"c*mu > 1 violated ({c * mu:.6g} <= 1)")
    return found


def scors_step(x: np.ndarray, gamma: float, v: Union[DirectionVector, np.ndarray], g: np.ndarray) -> np.ndarray:
    """x - gamma <v, g> v, never forming v v^T."""
    values = v.values if isinstance(v, DirectionVector) else np.asarray(v, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if not x.shape == values.shape == g.shape:
        raise ScorsValidationError(f"shape mismatch: x {x.shape}, v {values.shape}, g {g.shape}")
    return x - gamma * float(values @ g) * values


def coordinate_cost(kind: MethodLike, dim: int) -> int:
    """Gradient coordinates computed per iteration: 1 for canonical directions, d otherwise."""
    if kind == SGD:
        return dim
    direction = DirectionKind(kind)
    return 1 if direction.is_canonical else dim


def method_name(kind: MethodLike) -> str:
    return kind.value if isinstance(kind, DirectionKind) else str(kind)


class GradientTable:
    """
    Per-component gradient memory g_{n,k} with its running sum.

    Row k is replaced by grad f_k(X_n) whenever component k is sampled; the
    aggregate is maintained incrementally.
    """

    def __init__(self, rows: np.ndarray):
        self.rows = np.array(rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise ScorsValidationError(f"gradient table rows must be N x d, got {self.rows.shape}")
        self.aggregate = self.rows.sum(axis=0)

    @classmethod
    def from_objective(cls, obj: FiniteSumObjective, x: np.ndarray) -> "GradientTable":
        return cls(obj.component_grads(np.asarray(x, dtype=np.float64)))

    def update(self, k: int, new_grad: np.ndarray) -> "GradientTable":
        self.aggregate += new_grad - self.rows[k]
        self.rows[k] = new_grad
        return self

    def resum(self) -> np.ndarray:
        return self.rows.sum(axis=0)


def update_gradient_table(table: GradientTable, k: int, new_grad: np.ndarray) -> GradientTable:
    if not 0 <= k < table.rows.shape[0]:
        raise ScorsValidationError(f"row index {k} outside [0, {table.rows.shape[0]})")
    return table.update(k, np.asarray(new_grad, dtype=np.float64))


class NuPolicy(str, Enum):
    FIXED = "fixed"
    STATIC = "static"
    ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class InitPolicy:
    """X_1 = 0, or uniform on the sphere of the given radius"""
    kind: str = "zero"
    radius: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("zero", "gaussian"):
            raise ScorsValidationError(f"unknown init policy {self.kind!r}")
        if self.radius < 0.0:
            raise ScorsValidationError(f"init radius must be >= 0, got {self.radius}")

    def initial_point(self, dim: int, seed: int, replicate: int) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(dim)
        gen = rng_streams.stream(seed, replicate, rng_streams.INIT)
        z = gen.standard_normal(dim)
        return z * (self.radius / float(np.linalg.norm(z)))


@dataclass(frozen=True)
class SnapshotPolicy:
    """Log-spaced snapshot count, or an explicit set of iteration indices"""
    count: int = DEFAULT_SNAPSHOTS
    iterations: Optional[Tuple[int, ...]] = None

    def iterations_for(self, total: int) -> np.ndarray:
        if self.iterations is not None:
            chosen = np.array(sorted(set(int(n) for n in self.iterations if 1 <= n <= total)), dtype=np.int64)
        elif self.count <= 0:
            chosen = np.array([total], dtype=np.int64)
        else:
            grid = np.logspace(0.0, math.log10(total), num=self.count) if total > 1 else np.ones(1)
            chosen = np.unique(np.rint(grid).astype(np.int64))
        if chosen.size == 0 or chosen[-1] != total:
            chosen = np.append(chosen, np.int64(total))
        return chosen

    @classmethod
    def final_only(cls) -> "SnapshotPolicy":
        return cls(count=0)


@dataclass
class RunTrace:
    """Snapshots of one run; snapshot n is taken after n updates"""
    method: str
    seed: int
    replicate: int
    iterations: np.ndarray
    cumulative_cost: np.ndarray
    dist: np.ndarray
    dist_sq: np.ndarray
    gamma: np.ndarray
    initial_dist: float
    final_iterate: np.ndarray
    wall_time_per_iteration: float
    setup_cost: int = 0
    cost_per_iteration: int = 1
    final_probs: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def total_iterations(self) -> int:
        return int(self.iterations[-1]) if self.iterations.size else 0

    @property
    def relative_gap(self) -> np.ndarray:
        if self.initial_dist == 0.0:
            return np.zeros_like(self.dist)
        return self.dist / self.initial_dist

    @property
    def final_relative_gap(self) -> float:
        return float(self.relative_gap[-1]) if self.dist.size else float("nan")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "n": self.iterations.astype(np.int64),
                "cumulative_cost": self.cumulative_cost.astype(np.int64),
                "dist": self.dist,
                "dist_sq": self.dist_sq,
                "gamma_n": self.gamma,
            }
        )


def traces_to_frame(traces: Iterable[RunTrace]) -> pd.DataFrame:
    """Long format over many traces with method, replicate and relative gap columns."""
    frames = []
    for trace in traces:
        frame = trace.to_frame()
        frame.insert(0, "replicate", trace.replicate)
        frame.insert(0, "method", trace.method)
        frame["relative_gap"] = trace.relative_gap
        frames.append(frame)
    if not frames:
        return pd.DataFrame(
            columns=["method", "replicate", "n", "cumulative_cost", "dist", "dist_sq", "gamma_n", "relative_gap"]
        )
    return pd.concat(frames, ignore_index=True)


class _Recorder:
    def __init__(self, snapshot_at: np.ndarray, x_star: np.ndarray, cost_per_iteration: int, setup_cost: int):
        self.snapshot_at = snapshot_at
        self.x_star = x_star
        self.cost_per_iteration = cost_per_iteration
        self.setup_cost = setup_cost
        size = snapshot_at.size
        self.dist_sq = np.empty(size)
        self.gamma = np.empty(size)
        self.position = 0

    @property
    def next_iteration(self) -> int:
        if self.position < self.snapshot_at.size:
            return int(self.snapshot_at[self.position])
        return -1

    def record(self, x: np.ndarray, gamma: float) -> None:
        diff = x - self.x_star
        self.dist_sq[self.position] = float(diff @ diff)
        self.gamma[self.position] = gamma
        self.position += 1

    def finish(self, **kwargs: object) -> RunTrace:
        return RunTrace(
            iterations=self.snapshot_at.copy(),
            cumulative_cost=self.snapshot_at * self.cost_per_iteration,
            dist=np.sqrt(self.dist_sq),
            dist_sq=self.dist_sq,
            gamma=self.gamma,
            setup_cost=self.setup_cost,
            cost_per_iteration=self.cost_per_iteration,
            **kwargs,  # type: ignore[arg-type]
        )


def _guard(value: float, iteration: int, gamma: float) -> None:
    # NaN fails the comparison as well
    if not abs(value) <= DIVERGENCE_GUARD:
        metrics.run_failed("divergence")
        raise DivergenceError(iteration, gamma, abs(value))


def run(
    obj: FiniteSumObjective,
    sampler: DirectionSampler,
    schedule: StepSchedule,
    iterations: int,
    seed: int,
    snapshot_policy: Optional[SnapshotPolicy] = None,
    *,
    reference: ReferenceOptimum,
    replicate: int = 0,
    nu_policy: NuPolicy = NuPolicy.STATIC,
    init: Optional[InitPolicy] = None,
) -> RunTrace:
    """
    Run the SCORS recursion for `iterations` updates.

    Component indices come from the (seed, replicate, "components") stream and
    directions from an independent (seed, replicate, "directions") stream. For
    NU samplers, `nu_policy` selects fixed probabilities, the static rule
    resolved from g_1 at X_1, or the adaptive rule on the current aggregate.

    Raises:
        DivergenceError: if an iterate is non-finite or exceeds the guard
    """
    if iterations < 1:
        raise ScorsValidationError(f"iterations must be >= 1, got {iterations}")
    if sampler.dim != obj.dim:
        raise ScorsValidationError(f"sampler dim {sampler.dim} != objective dim {obj.dim}")
    init = init or InitPolicy()
    snapshot_policy = snapshot_policy or SnapshotPolicy()
    nu_policy = NuPolicy(nu_policy)
    d = obj.dim
    n_components = obj.n_components
    method = method_name(sampler.kind)

    x = init.initial_point(d, seed, replicate)
    initial_dist = float(np.linalg.norm(x - reference.x_star))
    rng_u = rng_streams.stream(seed, replicate, rng_streams.COMPONENTS)
    rng_v = rng_streams.stream(seed, replicate, rng_streams.DIRECTIONS)

    table: Optional[GradientTable] = None
    setup_cost = 0
    if sampler.kind is DirectionKind.NON_UNIFORM and nu_policy is not NuPolicy.FIXED:
        table = GradientTable.from_objective(obj, x)
        setup_cost = n_components * d
        sampler = sampler.with_probs(nu_probabilities_from_gradient(table.aggregate, sampler.prob_floor))

    recorder = _Recorder(
        snapshot_policy.iterations_for(iterations),
        reference.x_star,
        coordinate_cost(sampler.kind, d),
        setup_cost,
    )
    c, alpha, offset = schedule.c, schedule.alpha, schedule.offset
    adaptive = table is not None and nu_policy is NuPolicy.ADAPTIVE
    floor = sampler.prob_floor

    logger.debug("run_started", method=method, seed=seed, replicate=replicate, iterations=iterations)
    started = time.perf_counter()
    n = 0
    if sampler.is_canonical:
        scales_sq = sampler.squared_scales()
        cumulative = sampler.cumulative_probs()
        while n < iterations:
            size = min(DRAW_BLOCK, iterations - n)
            norm_sq = float(x @ x)
            components = rng_u.integers(0, n_components, size=size)
            if sampler.kind is DirectionKind.UNIFORM:
                coords = rng_v.integers(0, d, size=size)
                uniforms = None
            else:
                coords = None
                uniforms = rng_v.random(size)
            for i in range(size):
                n += 1
                gamma = c * (n + offset) ** (-alpha)
                k = int(components[i])
                j = int(coords[i]) if coords is not None else pick_coordinate(cumulative, float(uniforms[i]))
                if table is not None:
                    grad = obj.component_grad(k, x)
                    g_j = float(grad[j])
                else:
                    g_j = obj.component_grad_coord(k, x, j)
                old = float(x[j])
                new = old - gamma * float(scales_sq[j]) * g_j
                x[j] = new
                norm_sq += new * new - old * old
                _guard(math.sqrt(max(norm_sq, 0.0)), n, gamma)
                if table is not None:
                    table.update(k, grad)
                    if adaptive:
                        probs = nu_probabilities_from_gradient(table.aggregate, floor)
                        scales_sq = 1.0 / probs
                        cumulative = np.cumsum(probs)
                if n == recorder.next_iteration:
                    recorder.record(x, gamma)
    else:
        while n < iterations:
            size = min(DRAW_BLOCK, iterations - n)
            components = rng_u.integers(0, n_components, size=size)
            directions = draw_dense(sampler, rng_v, size)
            for i in range(size):
                n += 1
                gamma = c * (n + offset) ** (-alpha)
                v = directions[i]
                grad = obj.component_grad(int(components[i]), x)
                x -= (gamma * float(v @ grad)) * v
                _guard(float(np.linalg.norm(x)), n, gamma)
                if n == recorder.next_iteration:
                    recorder.record(x, gamma)
    elapsed = time.perf_counter() - started

    trace = recorder.finish(
        method=method,
        seed=seed,
        replicate=replicate,
        initial_dist=initial_dist,
        final_iterate=x.copy(),
        wall_time_per_iteration=elapsed / iterations,
        final_probs=1.0 / scales_sq if sampler.is_canonical else None,
    )
    metrics.run_completed(method, iterations, iterations * recorder.cost_per_iteration)
    logger.debug("run_finished", method=method, replicate=replicate, final_dist=float(trace.dist[-1]))
    return trace


def run_sgd_baseline(
    obj: FiniteSumObjective,
    schedule: StepSchedule,
    iterations: int,
    seed: int,
    snapshot_policy: Optional[SnapshotPolicy] = None,
    *,
    reference: ReferenceOptimum,
    replicate: int = 0,
    init: Optional[InitPolicy] = None,
) -> RunTrace:
    """Plain SGD X_{n+1} = X_n - gamma_n grad f_U(X_n); d coordinates per iteration."""
    if iterations < 1:
        raise ScorsValidationError(f"iterations must be >= 1, got {iterations}")
    init = init or InitPolicy()
    snapshot_policy = snapshot_policy or SnapshotPolicy()
    d = obj.dim
    n_components = obj.n_components

    x = init.initial_point(d, seed, replicate)
    initial_dist = float(np.linalg.norm(x - reference.x_star))
    rng_u = rng_streams.stream(seed, replicate, rng_streams.COMPONENTS)
    recorder = _Recorder(snapshot_policy.iterations_for(iterations), reference.x_star, coordinate_cost(SGD, d), 0)
    c, alpha, offset = schedule.c, schedule.alpha, schedule.offset

    started = time.perf_counter()
    n = 0
    while n < iterations:
        size = min(DRAW_BLOCK, iterations - n)
        components = rng_u.integers(0, n_components, size=size)
        for i in range(size):
            n += 1
            gamma = c * (n + offset) ** (-alpha)
            x -= gamma * obj.component_grad(int(components[i]), x)
            _guard(float(np.linalg.norm(x)), n, gamma)
            if n == recorder.next_iteration:
                recorder.record(x, gamma)
    elapsed = time.perf_counter() - started

    trace = recorder.finish(
        method=SGD,
        seed=seed,
        replicate=replicate,
        initial_dist=initial_dist,
        final_iterate=x.copy(),
        wall_time_per_iteration=elapsed / iterations,
    )
    metrics.run_completed(SGD, iterations, iterations * recorder.cost_per_iteration)
    return trace


def run_method(
    obj: FiniteSumObjective,
    method: MethodLike,
    schedule: StepSchedule,
    iterations: int,
    seed: int,
    snapshot_policy: Optional[SnapshotPolicy] = None,
    *,
    reference: ReferenceOptimum,
    replicate: int = 0,
    nu_policy: NuPolicy = NuPolicy.STATIC,
    init: Optional[InitPolicy] = None,
    sampler: Optional[DirectionSampler] = None,
    prob_floor: Optional[float] = None,
) -> RunTrace:
    """Dispatch to the SGD baseline or to SCORS with the sampler for `method`."""
    if method == SGD:
        return run_sgd_baseline(
            obj, schedule, iterations, seed, snapshot_policy, reference=reference, replicate=replicate, init=init
        )
    if sampler is None:
        sampler = build_sampler(DirectionKind(method), obj.dim, prob_floor)
    return run(
        obj,
        sampler,
        schedule,
        iterations,
        seed,
        snapshot_policy,
        reference=reference,
        replicate=replicate,
        nu_policy=nu_policy,
        init=init,
    )


def build_sampler(kind: DirectionKind, dim: int, prob_floor: Optional[float] = None) -> DirectionSampler:
    """Default sampler per kind; NU starts uniform until a policy resolves its probabilities."""
    if kind is DirectionKind.NON_UNIFORM:
        return DirectionSampler.non_uniform(np.full(dim, 1.0 / dim), prob_floor=prob_floor)
    return DirectionSampler(kind, dim)


def static_nu_sampler(
    obj: FiniteSumObjective, x1: np.ndarray, prob_floor: Optional[float] = None
) -> DirectionSampler:
    """NU sampler with the static probabilities computed from g_1 = sum_k grad f_k(X_1)."""
    aggregate = obj.component_grads(np.asarray(x1, dtype=np.float64)).sum(axis=0)
    return DirectionSampler.non_uniform(nu_probabilities_from_gradient(aggregate, prob_floor), prob_floor)


def unbiasedness_check(
    obj: FiniteSumObjective,
    sampler: Optional[DirectionSampler],
    x: np.ndarray,
    draws: int,
    rng: np.random.Generator,
) -> float:
    """
    Relative error between the Monte Carlo mean of <V, grad f_U(x)> V and grad f(x)
    at a frozen point. `sampler=None` checks the SGD direction grad f_U(x).
    """
    if draws < 1:
        raise ScorsValidationError(f"draws must be >= 1, got {draws}")
    x = np.asarray(x, dtype=np.float64)
    grads = obj.component_grads(x)
    total = np.zeros(obj.dim)
    remaining = draws
    while remaining > 0:
        size = min(65536, remaining)
        picked = grads[rng.integers(0, obj.n_components, size=size)]
        if sampler is None:
            total += picked.sum(axis=0)
        elif sampler.is_canonical:
            coords = draw_coordinates(sampler, rng, size)
            contributions = picked[np.arange(size), coords] * sampler.squared_scales()[coords]
            total += np.bincount(coords, weights=contributions, minlength=obj.dim)
        else:
            vectors = draw_dense(sampler, rng, size)
            inner = np.einsum("ij,ij->i", vectors, picked)
            total += inner @ vectors
        remaining -= size
    estimate = total / draws
    exact = obj.full_grad(x)
    return float(np.linalg.norm(estimate - exact) / np.linalg.norm(exact))


def snapshot_grid(n_max: int, points: int, n_min: int = 10) -> Tuple[int, ...]:
    """Log-spaced iteration grid from n_min to n_max."""
    grid = np.unique(np.rint(np.logspace(math.log10(n_min), math.log10(n_max), num=points)).astype(np.int64))
    return tuple(int(n) for n in grid)


def final_iterates(traces: Sequence[RunTrace]) -> np.ndarray:
    return np.vstack([trace.final_iterate for trace in traces])
