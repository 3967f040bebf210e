"""
Search-direction distributions for SCORS.

Four laws satisfy E[V V^T] = I_d:
- Uniform (U): sqrt(d) e_j with j uniform on the coordinates
- NonUniform (NU): e_j / sqrt(p_j) with j drawn from probs
- Gaussian (G): standard normal vector
- Spherical (S): uniform on the sphere of radius sqrt(d)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import structlog

from .errors import NonFinite, ScorsValidationError, ZeroVector

logger = structlog.get_logger(__name__)

PROB_SUM_TOL = 1e-12
# Vectorised draws are made in blocks of this size by the moment checks
MOMENT_BLOCK = 65536


class DirectionKind(str, Enum):
    UNIFORM = "U"
    NON_UNIFORM = "NU"
    GAUSSIAN = "G"
    SPHERICAL = "S"

    @property
    def is_canonical(self) -> bool:
        return self in (DirectionKind.UNIFORM, DirectionKind.NON_UNIFORM)


def default_prob_floor(dim: int) -> float:
    """1/(10d): keeps E||V||^4 = sum 1/p_j below 10 d^2."""
    return 1.0 / (10.0 * dim)


def _frozen(values: np.ndarray) -> np.ndarray:
    values = np.array(values, dtype=np.float64)
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class DirectionSampler:
    """Immutable descriptor of a direction law; the random stream is owned by the caller"""
    kind: DirectionKind
    dim: int
    probs: Optional[np.ndarray] = field(default=None, compare=False)
    prob_floor: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", DirectionKind(self.kind))
        if self.dim < 1:
            raise ScorsValidationError(f"dim must be >= 1, got {self.dim}")
        if self.kind is not DirectionKind.NON_UNIFORM:
            if self.probs is not None:
                raise ScorsValidationError(f"probs only apply to NU samplers, not {self.kind.value}")
            return

        if self.probs is None:
            raise ScorsValidationError("NU sampler requires probs")
        probs = _frozen(self.probs)
        if probs.shape != (self.dim,):
            raise ScorsValidationError(f"probs must have length {self.dim}, got shape {probs.shape}")
        floor = self.prob_floor if self.prob_floor is not None else default_prob_floor(self.dim)
        if not 0.0 < floor <= 1.0 / self.dim + 1e-15:
            raise ScorsValidationError(f"prob_floor must lie in (0, 1/d], got {floor}")
        if abs(float(np.sum(probs)) - 1.0) > PROB_SUM_TOL:
            raise ScorsValidationError(f"probs must sum to 1, got {float(np.sum(probs))!r}")
        if np.any(probs < floor - 1e-15):
            raise ScorsValidationError(
                f"every prob must be >= prob_floor={floor:.6g}, min is {float(probs.min()):.6g}"
            )
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "prob_floor", floor)

    @classmethod
    def uniform(cls, dim: int) -> "DirectionSampler":
        return cls(DirectionKind.UNIFORM, dim)

    @classmethod
    def gaussian(cls, dim: int) -> "DirectionSampler":
        return cls(DirectionKind.GAUSSIAN, dim)

    @classmethod
    def spherical(cls, dim: int) -> "DirectionSampler":
        return cls(DirectionKind.SPHERICAL, dim)

    @classmethod
    def non_uniform(cls, probs: np.ndarray, prob_floor: Optional[float] = None) -> "DirectionSampler":
        probs = np.asarray(probs, dtype=np.float64)
        return cls(DirectionKind.NON_UNIFORM, int(probs.shape[0]), probs=probs, prob_floor=prob_floor)

    def with_probs(self, probs: np.ndarray) -> "DirectionSampler":
        return DirectionSampler(DirectionKind.NON_UNIFORM, self.dim, probs=probs, prob_floor=self.prob_floor)

    @property
    def is_canonical(self) -> bool:
        return self.kind.is_canonical

    def squared_scales(self) -> np.ndarray:
        """||V||^2 for each canonical coordinate (d for U, 1/p_j for NU)."""
        if self.kind is DirectionKind.UNIFORM:
            return np.full(self.dim, float(self.dim))
        if self.kind is DirectionKind.NON_UNIFORM:
            assert self.probs is not None
            return 1.0 / self.probs
        raise ScorsValidationError(f"{self.kind.value} directions are not canonical")

    def cumulative_probs(self) -> np.ndarray:
        if self.kind is DirectionKind.UNIFORM:
            return np.cumsum(np.full(self.dim, 1.0 / self.dim))
        if self.kind is DirectionKind.NON_UNIFORM:
            assert self.probs is not None
            return np.cumsum(self.probs)
        raise ScorsValidationError(f"{self.kind.value} directions are not canonical")


@dataclass(frozen=True)
class DirectionVector:
    values: np.ndarray
    selected_coordinate: Optional[int] = None

    @property
    def squared_norm(self) -> float:
        return float(self.values @ self.values)


def pick_coordinate(cumulative: np.ndarray, u: float) -> int:
    """Inverse-CDF lookup of a coordinate from one uniform draw."""
    j = int(np.searchsorted(cumulative, u, side="right"))
    return min(j, cumulative.shape[0] - 1)


def _spherical(sampler: DirectionSampler, rng: np.random.Generator) -> np.ndarray:
    for _ in range(2):
        z = rng.standard_normal(sampler.dim)
        norm = float(np.linalg.norm(z))
        if norm > 0.0:
            return z * (math.sqrt(sampler.dim) / norm)
        logger.warning("spherical_zero_draw", dim=sampler.dim)
    raise ZeroVector("spherical sampler drew the zero vector twice")


def sample(sampler: DirectionSampler, rng: np.random.Generator) -> DirectionVector:
    """Draw one direction V with E[V V^T] = I_d."""
    d = sampler.dim
    if sampler.kind is DirectionKind.UNIFORM:
        j = int(rng.integers(0, d))
        values = np.zeros(d)
        values[j] = math.sqrt(d)
        return DirectionVector(values, j)
    if sampler.kind is DirectionKind.NON_UNIFORM:
        assert sampler.probs is not None
        j = pick_coordinate(sampler.cumulative_probs(), float(rng.random()))
        values = np.zeros(d)
        values[j] = 1.0 / math.sqrt(sampler.probs[j])
        return DirectionVector(values, j)
    if sampler.kind is DirectionKind.GAUSSIAN:
        return DirectionVector(rng.standard_normal(d))
    return DirectionVector(_spherical(sampler, rng))


def draw_coordinates(sampler: DirectionSampler, rng: np.random.Generator, size: int) -> np.ndarray:
    """Block of selected coordinates for a canonical sampler."""
    if sampler.kind is DirectionKind.UNIFORM:
        return rng.integers(0, sampler.dim, size=size)
    if sampler.kind is DirectionKind.NON_UNIFORM:
        cumulative = sampler.cumulative_probs()
        picks = np.searchsorted(cumulative, rng.random(size), side="right")
        return np.minimum(picks, sampler.dim - 1)
    raise ScorsValidationError(f"{sampler.kind.value} directions are not canonical")


def draw_dense(sampler: DirectionSampler, rng: np.random.Generator, size: int) -> np.ndarray:
    """Block of dense directions (rows) for G or S samplers."""
    if sampler.kind is DirectionKind.GAUSSIAN:
        return rng.standard_normal((size, sampler.dim))
    if sampler.kind is DirectionKind.SPHERICAL:
        block = rng.standard_normal((size, sampler.dim))
        norms = np.linalg.norm(block, axis=1)
        zero = norms == 0.0
        if np.any(zero):
            for row in np.flatnonzero(zero):
                block[row] = _spherical(sampler, rng)
            norms = np.where(zero, math.sqrt(sampler.dim), norms)
        return block * (math.sqrt(sampler.dim) / norms)[:, None]
    raise ScorsValidationError(f"{sampler.kind.value} directions are canonical, use draw_coordinates")


def second_moment_check(sampler: DirectionSampler, draws: int, rng: np.random.Generator) -> float:
    """Frobenius deviation of the empirical E[V V^T] from I_d over `draws` samples."""
    if draws < 10_000:
        raise ScorsValidationError(f"second_moment_check needs draws >= 10^4, got {draws}")
    d = sampler.dim
    accumulated = np.zeros((d, d))
    remaining = draws
    while remaining > 0:
        size = min(MOMENT_BLOCK, remaining)
        if sampler.is_canonical:
            counts = np.bincount(draw_coordinates(sampler, rng, size), minlength=d)
            accumulated[np.diag_indices(d)] += counts * sampler.squared_scales()
        else:
            block = draw_dense(sampler, rng, size)
            accumulated += block.T @ block
        remaining -= size
    return float(np.linalg.norm(accumulated / draws - np.eye(d), "fro"))


def fourth_moment(sampler: DirectionSampler) -> float:
    """E||V||^4: d^2 for U and S, d(d+2) for G, sum_j 1/p_j for NU."""
    d = sampler.dim
    if sampler.kind in (DirectionKind.UNIFORM, DirectionKind.SPHERICAL):
        return float(d * d)
    if sampler.kind is DirectionKind.GAUSSIAN:
        return float(d * (d + 2))
    assert sampler.probs is not None
    return float(np.sum(1.0 / sampler.probs))


def apply_prob_floor(raw: np.ndarray, prob_floor: float) -> np.ndarray:
    """
    Raise entries below prob_floor to the floor and share the remaining mass
    among the others proportionally, repeating until no free entry is below it.
    """
    d = raw.shape[0]
    probs = raw.astype(np.float64).copy()
    fixed = np.zeros(d, dtype=bool)
    for _ in range(d):
        low = (probs < prob_floor) & ~fixed
        if not np.any(low):
            break
        fixed |= low
        probs[fixed] = prob_floor
        free = ~fixed
        free_mass = 1.0 - prob_floor * int(fixed.sum())
        raw_free = float(raw[free].sum()) if np.any(free) else 0.0
        if raw_free > 0.0:
            probs[free] = raw[free] * (free_mass / raw_free)
        elif np.any(free):
            probs[free] = free_mass / int(free.sum())
    return probs


def nu_probabilities_from_gradient(g: np.ndarray, prob_floor: Optional[float] = None) -> np.ndarray:
    """
    Coordinate probabilities favouring the largest-magnitude gradient coordinate.

    p_{j*} = |g_{j*}| / sum_i |g_i| with j* the first argmax of |g|; the other
    coordinates share 1 - p_{j*} equally. A zero gradient falls back to uniform.
    The result is floored at prob_floor (default 1/(10d)) and renormalised.

    Raises:
        NonFinite: if any gradient coordinate is not finite
    """
    g = np.asarray(g, dtype=np.float64)
    d = g.shape[0]
    if d < 2:
        raise ScorsValidationError(f"non-uniform probabilities need d >= 2, got {d}")
    floor = prob_floor if prob_floor is not None else default_prob_floor(d)
    if not 0.0 < floor <= 1.0 / d + 1e-15:
        raise ScorsValidationError(f"prob_floor must lie in (0, 1/d], got {floor}")

    magnitudes = np.abs(g)
    if not np.all(np.isfinite(magnitudes)):
        raise NonFinite("gradient used for the NU probabilities is not finite")
    total = float(magnitudes.sum())
    if total == 0.0:
        return np.full(d, 1.0 / d)

    j_star = int(np.argmax(magnitudes))
    p_star = float(magnitudes[j_star]) / total
    raw = np.full(d, (1.0 - p_star) / (d - 1))
    raw[j_star] = p_star
    return apply_prob_floor(raw, floor)
