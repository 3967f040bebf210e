"""
Exception hierarchy for the SCORS library and harness.

Validation errors (bad inputs, violated preconditions, bad configs) and numerical
errors (non-finite values, unstable spectra, divergence) are kept apart so the CLI
can map them to distinct exit codes.
"""

from typing import Optional


class ScorsError(Exception):
    """Base exception for all SCORS errors"""
    pass


class ScorsValidationError(ScorsError, ValueError):
    """Invalid input or violated precondition"""
    pass


class ScorsNumericalError(ScorsError, ArithmeticError):
    """Numerical failure during a computation"""
    pass


class ConfigParseError(ScorsValidationError):
    """Malformed experiment config document"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigValidationError(ScorsValidationError):
    """Config parsed but violates an invariant"""
    pass


class InvalidSchedule(ScorsValidationError):
    """Step schedule outside the admissible range"""
    pass


class MissingProbs(ScorsValidationError):
    """Non-uniform closed form requested without probabilities"""
    pass


class AdaptiveSamplerNotIID(ScorsValidationError):
    """Adaptive direction policy used where i.i.d. directions are required"""
    pass


class NonSymmetric(ScorsNumericalError):
    pass


class NonFinite(ScorsNumericalError):
    pass


class UnstableSpectrum(ScorsNumericalError):
    """An eigenvalue has non-positive real part"""
    pass


class HorizonTooShort(ScorsNumericalError):
    pass


class RhoTooSmall(ScorsNumericalError):
    """Smallest Hessian eigenvalue too small for the CLT covariance to exist"""

    def __init__(self, rho: float, threshold: float = 0.5):
        self.rho = rho
        self.threshold = threshold
        super().__init__(f"rho={rho:.6g} must exceed {threshold:.6g}")

    def __reduce__(self):
        return (type(self), (self.rho, self.threshold))


class ZeroVector(ScorsNumericalError):
    pass


class DivergenceError(ScorsNumericalError):
    """Iterate became non-finite or left the divergence guard"""

    def __init__(self, iteration: int, step_size: float, norm: float):
        self.iteration = iteration
        self.step_size = step_size
        self.norm = norm
        super().__init__(
            f"iterate diverged at n={iteration} (gamma_n={step_size:.6g}, ||x||={norm:.6g})"
        )

    def __reduce__(self):
        return (type(self), (self.iteration, self.step_size, self.norm))


class ConvergenceError(ScorsNumericalError):
    """Iterative refinement did not reach its tolerance"""
    pass
