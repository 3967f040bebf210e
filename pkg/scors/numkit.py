"""
Small dense linear algebra for the asymptotics pipeline.

Cyclic Jacobi symmetric eigendecomposition, scaling-and-squaring matrix
exponential, the transposed Lyapunov solve for the asymptotic covariance and a
Simpson quadrature oracle of the covariance integral used to cross-check it.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import structlog

from .errors import HorizonTooShort, NonFinite, NonSymmetric, ScorsValidationError, UnstableSpectrum

logger = structlog.get_logger(__name__)

SYMMETRY_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60
TAYLOR_DEGREE = 6
# ||A / 2^s||_1 bound before the Taylor core; keeps the degree-6 remainder below 1e-16
TAYLOR_SCALE_BOUND = 2.0**-6
QUADRATURE_STEPS = 4000
QUADRATURE_MIN_HORIZON = 20.0
HORIZON_TAIL_LIMIT = 1e-9


@dataclass(frozen=True)
class SymEigDecomposition:
    """Eigenvalues ascending; eigenvectors are the orthonormal columns"""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T

    @property
    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues[0])


def as_dense(a: object, square: bool = False, name: str = "matrix") -> np.ndarray:
    """Validate a DenseMatrix: 2-D float64 array with finite entries."""
    arr = np.array(a, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ScorsValidationError(f"{name} must be 2-D, got shape {arr.shape}")
    if square and arr.shape[0] != arr.shape[1]:
        raise ScorsValidationError(f"{name} must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{name} has non-finite entries")
    return arr


def check_symmetric(a: np.ndarray, tol: float = SYMMETRY_TOL, name: str = "matrix") -> None:
    gap = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if gap > tol:
        raise NonSymmetric(f"{name} is not symmetric (max |a - a^T| = {gap:.3e} > {tol:.1e})")


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def frobenius_relative_error(approx: np.ndarray, exact: np.ndarray) -> float:
    denom = float(np.linalg.norm(exact, "fro"))
    diff = float(np.linalg.norm(np.asarray(approx) - np.asarray(exact), "fro"))
    if denom == 0.0:
        return diff
    return diff / denom


def _off_diagonal_norm(a: np.ndarray) -> float:
    off = a[~np.eye(a.shape[0], dtype=bool)]
    return float(np.sqrt(np.sum(off * off)))


def sym_eig(a: object) -> SymEigDecomposition:
    """
    Symmetric eigendecomposition by cyclic Jacobi rotations.

    Args:
        a: Symmetric square matrix (symmetric within 1e-12 entrywise)

    Returns:
        SymEigDecomposition with ascending eigenvalues

    Raises:
        NonFinite: if an entry is not finite
        NonSymmetric: if the symmetry tolerance is violated
    """
    work = as_dense(a, square=True)
    check_symmetric(work)
    work = symmetrize(work)
    d = work.shape[0]
    vecs = np.eye(d)

    scale = float(np.linalg.norm(work, "fro"))
    sweeps = 0
    while sweeps < JACOBI_MAX_SWEEPS:
        off = _off_diagonal_norm(work)
        if off == 0.0 or off <= 1e-15 * scale:
            break
        sweeps += 1
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = work[p, q]
                if apq == 0.0:
                    continue
                theta = (work[q, q] - work[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c

                col_p = work[:, p].copy()
                col_q = work[:, q].copy()
                work[:, p] = c * col_p - s * col_q
                work[:, q] = s * col_p + c * col_q
                row_p = work[p, :].copy()
                row_q = work[q, :].copy()
                work[p, :] = c * row_p - s * row_q
                work[q, :] = s * row_p + c * row_q
                work[p, q] = 0.0
                work[q, p] = 0.0

                vec_p = vecs[:, p].copy()
                vec_q = vecs[:, q].copy()
                vecs[:, p] = c * vec_p - s * vec_q
                vecs[:, q] = s * vec_p + c * vec_q
    else:
        logger.warning("jacobi_sweep_limit", dim=d, off_norm=_off_diagonal_norm(work))

    values = np.diag(work).copy()
    order = np.argsort(values, kind="stable")
    return SymEigDecomposition(
        eigenvalues=values[order],
        eigenvectors=vecs[:, order],
        sweeps=sweeps,
    )


def mat_exp(a: object) -> np.ndarray:
    """
    Matrix exponential by scaling and squaring around a degree-6 Taylor core.

    Raises:
        NonFinite: on overflow
    """
    arr = as_dense(a, square=True)
    d = arr.shape[0]
    norm = float(np.max(np.sum(np.abs(arr), axis=0))) if d else 0.0
    squarings = 0
    if norm > TAYLOR_SCALE_BOUND:
        squarings = int(math.ceil(math.log2(norm / TAYLOR_SCALE_BOUND)))
    scaled = arr / (2.0**squarings)

    result = np.eye(d)
    term = np.eye(d)
    for k in range(1, TAYLOR_DEGREE + 1):
        term = term @ scaled / k
        result = result + term

    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(squarings):
            result = result @ result
    if not np.all(np.isfinite(result)):
        raise NonFinite(f"matrix exponential overflowed (||A||_1={norm:.3e})")
    return result


def solve_lyapunov_transposed(a: object, gamma: object) -> np.ndarray:
    """
    Solve A^T S + S A = Gamma for symmetric A with positive spectrum.

    Uses the eigendecomposition A = V diag(l) V^T:
    S = V [ (V^T Gamma V)_ij / (l_i + l_j) ] V^T.

    Raises:
        NonSymmetric: if A or Gamma is not symmetric
        UnstableSpectrum: if an eigenvalue of A is <= 0
    """
    a_mat = as_dense(a, square=True, name="A")
    g_mat = as_dense(gamma, square=True, name="Gamma")
    if a_mat.shape != g_mat.shape:
        raise ScorsValidationError(f"shape mismatch: A {a_mat.shape} vs Gamma {g_mat.shape}")
    check_symmetric(g_mat, tol=SYMMETRY_TOL * max(1.0, float(np.max(np.abs(g_mat)))), name="Gamma")

    eig = sym_eig(a_mat)
    if eig.min_eigenvalue <= 0.0:
        raise UnstableSpectrum(f"min eigenvalue of A is {eig.min_eigenvalue:.6g} <= 0")

    v = eig.eigenvectors
    lam = eig.eigenvalues
    rotated = v.T @ symmetrize(g_mat) @ v
    solved = rotated / (lam[:, None] + lam[None, :])
    return symmetrize(v @ solved @ v.T)


def lyapunov_residual(a: np.ndarray, sigma: np.ndarray, gamma: np.ndarray) -> float:
    """Relative Frobenius residual of A^T S + S A = Gamma."""
    return frobenius_relative_error(a.T @ sigma + sigma @ a, gamma)


def _min_real_eigenvalue(a: np.ndarray) -> float:
    if np.array_equal(a, a.T):
        return sym_eig(a).min_eigenvalue
    return float(np.min(np.linalg.eigvals(a).real))


def default_horizon(min_eigenvalue: float) -> float:
    return max(QUADRATURE_MIN_HORIZON, 30.0 / (2.0 * min_eigenvalue))


def quadrature_sigma_oracle(
    a: object,
    gamma: object,
    horizon: Optional[float] = None,
    steps: int = QUADRATURE_STEPS,
) -> np.ndarray:
    """
    Composite-Simpson approximation of int_0^T exp(-A u)^T Gamma exp(-A u) du.

    Independent cross-check for solve_lyapunov_transposed.

    Raises:
        UnstableSpectrum: if an eigenvalue of A has real part <= 0
        HorizonTooShort: if exp(-2 lmin T) exceeds 1e-9
    """
    a_mat = as_dense(a, square=True, name="A")
    g_mat = as_dense(gamma, square=True, name="Gamma")
    lam_min = _min_real_eigenvalue(a_mat)
    if lam_min <= 0.0:
        raise UnstableSpectrum(f"min real eigenvalue of A is {lam_min:.6g} <= 0")
    if horizon is None:
        horizon = default_horizon(lam_min)
    if horizon <= 0:
        raise ScorsValidationError(f"horizon must be positive, got {horizon}")
    tail = math.exp(-2.0 * lam_min * horizon)
    if tail > HORIZON_TAIL_LIMIT:
        raise HorizonTooShort(
            f"tail bound exp(-2*{lam_min:.4g}*{horizon:.4g}) = {tail:.3e} exceeds {HORIZON_TAIL_LIMIT:.0e}"
        )
    if steps < 2:
        raise ScorsValidationError(f"steps must be >= 2, got {steps}")
    if steps % 2:
        steps += 1

    h = horizon / steps
    step_exp = mat_exp(-a_mat * h)
    current = np.eye(a_mat.shape[0])
    total = np.zeros_like(g_mat)
    for k in range(steps + 1):
        if k == 0 or k == steps:
            weight = 1.0
        elif k % 2:
            weight = 4.0
        else:
            weight = 2.0
        total += weight * (current.T @ g_mat @ current)
        current = current @ step_exp
    return symmetrize(total * (h / 3.0))
