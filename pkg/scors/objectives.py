"""
Finite-sum objectives f(x) = (1/N) sum_k f_k(x).

Two synthetic families:
- Logistic: f_k(x) = log(1 + exp(<x, w_k>)) - y_k <x, w_k>
- NoisyQuadratic: f_k(x) = 1/2 (x - x*)^T A (x - x*) - <b_k, x>, sum_k b_k = 0,
  so x* is the exact equilibrium, H = A and Q = (1/N) sum_k b_k b_k^T

plus the diagnostics tau^2(x), theta*, Q and the Hessian used by the
asymptotic analysis. Component indices are 0-based.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from scipy.special import expit

from . import rng as rng_streams
from .errors import ConvergenceError, NonFinite, ScorsValidationError
from .numkit import as_dense, check_symmetric, sym_eig, symmetrize

logger = structlog.get_logger(__name__)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 100
EXACT_GRADIENT_TOL = 1e-12


class ObjectiveFamily(str, Enum):
    LOGISTIC = "logistic"
    NOISY_QUADRATIC = "quadratic"


class OptimumSource(str, Enum):
    EXACT_BY_CONSTRUCTION = "exact_by_construction"
    GENERATOR_PARAMETER = "generator_parameter"
    NUMERICALLY_COMPUTED = "numerically_computed"


@dataclass(frozen=True)
class ReferenceOptimum:
    x_star: np.ndarray
    source: OptimumSource
    gradient_norm_at_x_star: float

    def __post_init__(self) -> None:
        if self.source is OptimumSource.EXACT_BY_CONSTRUCTION:
            limit = EXACT_GRADIENT_TOL * max(1.0, float(np.linalg.norm(self.x_star)))
            if self.gradient_norm_at_x_star > limit:
                raise ScorsValidationError(
                    f"exact optimum has gradient norm {self.gradient_norm_at_x_star:.3e}"
                )
        if self.source is OptimumSource.NUMERICALLY_COMPUTED and self.gradient_norm_at_x_star > NEWTON_TOL:
            raise ScorsValidationError(
                f"computed optimum has gradient norm {self.gradient_norm_at_x_star:.3e} > {NEWTON_TOL:.0e}"
            )


def _sigmoid(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def logistic_residual(z: float, y: float) -> float:
    """sigma(z) - y without cancellation: for y=1 this is -sigma(-z)."""
    if y > 0.5:
        return -_sigmoid(-z)
    return _sigmoid(z)


def logistic_residuals(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.where(y > 0.5, -expit(-z), expit(z))


class FiniteSumObjective(ABC):
    """Immutable finite-sum objective with component-gradient access"""

    family: ObjectiveFamily

    @property
    @abstractmethod
    def n_components(self) -> int: ...

    @property
    @abstractmethod
    def dim(self) -> int: ...

    @abstractmethod
    def component_loss(self, k: int, x: np.ndarray) -> float: ...

    @abstractmethod
    def component_grad(self, k: int, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def component_grad_coord(self, k: int, x: np.ndarray, j: int) -> float: ...

    @abstractmethod
    def component_grads(self, x: np.ndarray) -> np.ndarray:
        """All N component gradients as an N x d matrix."""

    @abstractmethod
    def full_grad(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def full_loss(self, x: np.ndarray) -> float: ...

    @abstractmethod
    def hessian_at(self, x: np.ndarray) -> np.ndarray: ...

    @property
    @abstractmethod
    def lipschitz_at_optimum(self) -> float:
        """L with tau^2(x) <= L ||x - x*||^2."""

    def check_index(self, k: int) -> None:
        if not 0 <= k < self.n_components:
            raise ScorsValidationError(f"component index {k} outside [0, {self.n_components})")


class LogisticObjective(FiniteSumObjective):
    family = ObjectiveFamily.LOGISTIC

    def __init__(self, features: np.ndarray, labels: np.ndarray):
        features = as_dense(features, name="features")
        labels = np.array(labels, dtype=np.float64).reshape(-1)
        if features.shape[0] < 1:
            raise ScorsValidationError("logistic objective needs N >= 1")
        if labels.shape[0] != features.shape[0]:
            raise ScorsValidationError(
                f"{labels.shape[0]} labels for {features.shape[0]} feature rows"
            )
        if not np.all((labels == 0.0) | (labels == 1.0)):
            raise ScorsValidationError("labels must be 0 or 1")
        features.setflags(write=False)
        labels.setflags(write=False)
        self.features = features
        self.labels = labels

    @property
    def n_components(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def component_loss(self, k: int, x: np.ndarray) -> float:
        z = float(self.features[k] @ x)
        return float(np.logaddexp(0.0, z)) - self.labels[k] * z

    def component_grad(self, k: int, x: np.ndarray) -> np.ndarray:
        w = self.features[k]
        return logistic_residual(float(w @ x), self.labels[k]) * w

    def component_grad_coord(self, k: int, x: np.ndarray, j: int) -> float:
        w = self.features[k]
        return logistic_residual(float(w @ x), self.labels[k]) * w[j]

    def component_grads(self, x: np.ndarray) -> np.ndarray:
        residuals = logistic_residuals(self.features @ x, self.labels)
        return residuals[:, None] * self.features

    def full_grad(self, x: np.ndarray) -> np.ndarray:
        residuals = logistic_residuals(self.features @ x, self.labels)
        grad = self.features.T @ residuals / self.n_components
        if not np.all(np.isfinite(grad)):
            raise NonFinite("logistic full gradient is not finite")
        return grad

    def full_loss(self, x: np.ndarray) -> float:
        z = self.features @ x
        return float(np.mean(np.logaddexp(0.0, z) - self.labels * z))

    def hessian_at(self, x: np.ndarray) -> np.ndarray:
        z = self.features @ x
        curvature = expit(z) * expit(-z)
        weighted = self.features * curvature[:, None]
        return symmetrize(self.features.T @ weighted / self.n_components)

    @property
    def lipschitz_at_optimum(self) -> float:
        """max_k ||w_k||^4 / 16, a valid tau^2 constant since sigma' <= 1/4."""
        norms_sq = np.sum(self.features * self.features, axis=1)
        return float(np.max(norms_sq) ** 2 / 16.0)


class NoisyQuadraticObjective(FiniteSumObjective):
    family = ObjectiveFamily.NOISY_QUADRATIC

    def __init__(self, matrix: np.ndarray, noise: np.ndarray, x_star: np.ndarray):
        matrix = as_dense(matrix, square=True, name="A")
        check_symmetric(matrix, name="A")
        matrix = symmetrize(matrix)
        noise = as_dense(noise, name="noise")
        x_star = np.array(x_star, dtype=np.float64).reshape(-1)
        d = matrix.shape[0]
        if noise.shape[1] != d or x_star.shape[0] != d:
            raise ScorsValidationError(
                f"dimension mismatch: A {matrix.shape}, noise {noise.shape}, x* {x_star.shape}"
            )
        n = noise.shape[0]
        if n < 1:
            raise ScorsValidationError("quadratic objective needs N >= 1")
        drift = float(np.linalg.norm(noise.sum(axis=0)))
        if drift > 1e-10 * n:
            raise ScorsValidationError(f"noise vectors must sum to zero, |sum b_k| = {drift:.3e}")
        eig = sym_eig(matrix)
        if eig.min_eigenvalue <= 0.0:
            raise ScorsValidationError(f"A must be positive definite, min eigenvalue {eig.min_eigenvalue:.3e}")

        for arr in (matrix, noise, x_star):
            arr.setflags(write=False)
        self.matrix = matrix
        self.noise = noise
        self.x_star = x_star
        self.eigenvalues = eig.eigenvalues
        self._ax_star = matrix @ x_star
        self._mean_noise = noise.mean(axis=0)

    @property
    def n_components(self) -> int:
        return int(self.noise.shape[0])

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[0])

    def component_loss(self, k: int, x: np.ndarray) -> float:
        diff = x - self.x_star
        return 0.5 * float(diff @ self.matrix @ diff) - float(self.noise[k] @ x)

    def component_grad(self, k: int, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x - self._ax_star - self.noise[k]

    def component_grad_coord(self, k: int, x: np.ndarray, j: int) -> float:
        return float(self.matrix[j] @ x) - self._ax_star[j] - self.noise[k, j]

    def component_grads(self, x: np.ndarray) -> np.ndarray:
        return (self.matrix @ x - self._ax_star)[None, :] - self.noise

    def full_grad(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x - self._ax_star - self._mean_noise

    def full_loss(self, x: np.ndarray) -> float:
        diff = x - self.x_star
        return 0.5 * float(diff @ self.matrix @ diff) - float(self._mean_noise @ x)

    def hessian_at(self, x: np.ndarray) -> np.ndarray:
        return np.array(self.matrix)

    @property
    def mu(self) -> float:
        """Strong monotonicity constant lambda_min(A)."""
        return float(self.eigenvalues[0])

    @property
    def lipschitz_at_optimum(self) -> float:
        """tau^2(x) <= lambda_max(A)^2 ||x - x*||^2."""
        return float(self.eigenvalues[-1] ** 2)


def component_grad(obj: FiniteSumObjective, k: int, x: np.ndarray) -> np.ndarray:
    obj.check_index(k)
    grad = obj.component_grad(k, np.asarray(x, dtype=np.float64))
    if not np.all(np.isfinite(grad)):
        raise NonFinite(f"component gradient {k} is not finite")
    return grad


def full_grad(obj: FiniteSumObjective, x: np.ndarray) -> np.ndarray:
    grad = obj.full_grad(np.asarray(x, dtype=np.float64))
    if not np.all(np.isfinite(grad)):
        raise NonFinite("full gradient is not finite")
    return grad


def tau_squared(obj: FiniteSumObjective, x: np.ndarray, ref: ReferenceOptimum) -> float:
    """(1/N) sum_k ||grad f_k(x) - grad f_k(x*)||^2."""
    diff = obj.component_grads(np.asarray(x, dtype=np.float64)) - obj.component_grads(ref.x_star)
    return float(np.mean(np.sum(diff * diff, axis=1)))


def theta_star(obj: FiniteSumObjective, ref: ReferenceOptimum) -> float:
    """(1/N) sum_k ||grad f_k(x*)||^2, the noise level at the optimum."""
    grads = obj.component_grads(ref.x_star)
    return float(np.mean(np.sum(grads * grads, axis=1)))


def q_matrix(obj: FiniteSumObjective, ref: ReferenceOptimum) -> np.ndarray:
    """(1/N) sum_k grad f_k(x*) grad f_k(x*)^T."""
    grads = obj.component_grads(ref.x_star)
    return symmetrize(grads.T @ grads / obj.n_components)


def hessian_at(obj: FiniteSumObjective, x: np.ndarray) -> np.ndarray:
    return obj.hessian_at(np.asarray(x, dtype=np.float64))


def strong_monotonicity_constant(obj: FiniteSumObjective) -> Optional[float]:
    if isinstance(obj, NoisyQuadraticObjective):
        return obj.mu
    return None


def empirical_optimum(
    obj: FiniteSumObjective,
    start: Optional[np.ndarray] = None,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> ReferenceOptimum:
    """
    Full-batch Newton iterations to ||grad f|| <= tol.

    Raises:
        ConvergenceError: if the tolerance is not reached within max_iter steps,
            or the Hessian is singular (no unique minimiser, e.g. N < d)
    """
    if isinstance(obj, LogisticObjective):
        rank = int(np.linalg.matrix_rank(obj.features))
        if rank < obj.dim:
            raise ConvergenceError(f"features have rank {rank} < d={obj.dim}, the minimiser is not unique")
    x = np.zeros(obj.dim) if start is None else np.array(start, dtype=np.float64)
    grad = full_grad(obj, x)
    for iteration in range(max_iter):
        norm = float(np.linalg.norm(grad))
        if norm <= tol:
            logger.debug("newton_converged", iterations=iteration, gradient_norm=norm)
            return ReferenceOptimum(x, OptimumSource.NUMERICALLY_COMPUTED, norm)
        hessian = obj.hessian_at(x)
        rank = int(np.linalg.matrix_rank(hessian))
        if rank < obj.dim:
            raise ConvergenceError(
                f"Newton refinement hit a singular Hessian (rank {rank} < d={obj.dim}) at iteration {iteration}"
            )
        try:
            step = np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError as e:
            raise ConvergenceError(f"Newton refinement failed at iteration {iteration}: {e}") from e
        if not np.all(np.isfinite(step)):
            raise ConvergenceError(f"Newton step is not finite at iteration {iteration}")
        x = x - step
        grad = full_grad(obj, x)
    norm = float(np.linalg.norm(grad))
    if norm <= tol:
        return ReferenceOptimum(x, OptimumSource.NUMERICALLY_COMPUTED, norm)
    raise ConvergenceError(f"Newton refinement stopped at gradient norm {norm:.3e} > {tol:.0e}")


def synthesize_logistic(
    n_components: int,
    dim: int,
    seed: int,
    refine: bool = False,
) -> Tuple[LogisticObjective, ReferenceOptimum]:
    """
    Draw a logistic dataset: w ~ N(0, I_d), x* uniform on the unit sphere,
    P(y=1 | w) = sigmoid(<w, x*>).

    Returns the generator parameter as reference, or the empirical minimizer
    of the finite sum when refine is set.
    """
    if n_components < 1 or dim < 1:
        raise ScorsValidationError(f"need N >= 1 and d >= 1, got N={n_components}, d={dim}")
    gen = rng_streams.stream(seed, 0, rng_streams.DATA)
    direction = gen.standard_normal(dim)
    while float(np.linalg.norm(direction)) == 0.0:
        direction = gen.standard_normal(dim)
    x_star = direction / float(np.linalg.norm(direction))
    features = gen.standard_normal((n_components, dim))
    labels = (gen.random(n_components) < expit(features @ x_star)).astype(np.float64)

    obj = LogisticObjective(features, labels)
    if refine:
        ref = empirical_optimum(obj, start=x_star)
    else:
        ref = ReferenceOptimum(
            x_star,
            OptimumSource.GENERATOR_PARAMETER,
            float(np.linalg.norm(obj.full_grad(x_star))),
        )
    logger.info(
        "logistic_synthesized",
        n_components=n_components,
        dim=dim,
        seed=seed,
        reference=ref.source.value,
        positive_rate=float(labels.mean()),
    )
    return obj, ref


def _inverse_sqrt(matrix: np.ndarray) -> np.ndarray:
    eig = sym_eig(matrix)
    if eig.min_eigenvalue <= 0.0:
        raise ScorsValidationError("noise second moment is singular, cannot whiten (need N > d)")
    v = eig.eigenvectors
    return (v / np.sqrt(eig.eigenvalues)) @ v.T


def make_noisy_quadratic(
    dim: int,
    eig_range: Sequence[float],
    noise_scale: float,
    n_components: int,
    seed: int,
    whiten_noise: bool = False,
) -> Tuple[NoisyQuadraticObjective, ReferenceOptimum]:
    """
    Quadratic family with an exact optimum.

    A has eigenvalues log-uniform in eig_range under a random rotation, x* is
    standard normal and the b_k are Gaussian recentred to sum to zero. With
    whiten_noise the b_k are rescaled so that Q = noise_scale^2 I_d exactly.
    """
    lo, hi = float(eig_range[0]), float(eig_range[1])
    if not 0.0 < lo <= hi:
        raise ScorsValidationError(f"eig_range must satisfy 0 < lo <= hi, got ({lo}, {hi})")
    if n_components < 2:
        raise ScorsValidationError(f"quadratic family needs N >= 2, got {n_components}")
    if noise_scale < 0.0:
        raise ScorsValidationError(f"noise_scale must be >= 0, got {noise_scale}")

    gen = rng_streams.stream(seed, 0, rng_streams.DATA)
    eigenvalues = np.exp(gen.uniform(math.log(lo), math.log(hi), size=dim))
    basis, upper = np.linalg.qr(gen.standard_normal((dim, dim)))
    basis = basis * np.where(np.diag(upper) < 0.0, -1.0, 1.0)
    matrix = symmetrize((basis * eigenvalues) @ basis.T)
    x_star = gen.standard_normal(dim)

    noise = noise_scale * gen.standard_normal((n_components, dim))
    noise -= noise.mean(axis=0)
    if whiten_noise and noise_scale > 0.0:
        second_moment = symmetrize(noise.T @ noise / n_components)
        noise = noise_scale * noise @ _inverse_sqrt(second_moment)
        noise -= noise.mean(axis=0)

    obj = NoisyQuadraticObjective(matrix, noise, x_star)
    ref = ReferenceOptimum(
        np.array(x_star),
        OptimumSource.EXACT_BY_CONSTRUCTION,
        float(np.linalg.norm(obj.full_grad(x_star))),
    )
    return obj, ref


def export_dataset_csv(obj: LogisticObjective, path: Union[str, Path]) -> Path:
    """One row per sample: y, w_1..w_d (17 significant digits)."""
    path = Path(path)
    frame = pd.DataFrame(obj.features, columns=[f"w_{j + 1}" for j in range(obj.dim)])
    frame.insert(0, "y", obj.labels.astype(np.int64))
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path


def load_dataset_csv(path: Union[str, Path]) -> LogisticObjective:
    frame = pd.read_csv(path, float_precision="round_trip")
    if "y" not in frame.columns:
        raise ScorsValidationError(f"{path}: dataset CSV needs a 'y' column")
    features = frame.drop(columns=["y"]).to_numpy(dtype=np.float64)
    return LogisticObjective(features, frame["y"].to_numpy(dtype=np.float64))
