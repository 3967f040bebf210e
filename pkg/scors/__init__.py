"""
SCORS: stochastic gradient descent with random search directions.

Finite-sum objectives, direction laws, the SCORS and SGD iterations, the
asymptotic covariance toolkit and an experiment harness.
"""

from .directions import DirectionKind, DirectionSampler, DirectionVector
from .errors import ScorsError, ScorsNumericalError, ScorsValidationError
from .objectives import (
    LogisticObjective,
    NoisyQuadraticObjective,
    ReferenceOptimum,
    make_noisy_quadratic,
    synthesize_logistic,
)
from .optimizer import GradientTable, NuPolicy, RunTrace, StepSchedule, run, run_sgd_baseline

__version__ = "0.1.0"

__all__ = [
    "DirectionKind",
    "DirectionSampler",
    "DirectionVector",
    "GradientTable",
    "LogisticObjective",
    "NoisyQuadraticObjective",
    "NuPolicy",
    "ReferenceOptimum",
    "RunTrace",
    "ScorsError",
    "ScorsNumericalError",
    "ScorsValidationError",
    "StepSchedule",
    "make_noisy_quadratic",
    "run",
    "run_sgd_baseline",
    "synthesize_logistic",
]
