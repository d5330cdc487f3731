"""
Dense linear algebra primitives and the seeded random source shared by every other module.
"""

from .linalg import CholeskyError, CholeskyFactor, DimensionError, cholesky_with_jitter, logdet, solve_posdef
from .random import RandomStream, gaussian_draws, minibatch_indices

__all__ = [
    "CholeskyError",
    "CholeskyFactor",
    "DimensionError",
    "RandomStream",
    "cholesky_with_jitter",
    "gaussian_draws",
    "logdet",
    "minibatch_indices",
    "solve_posdef",
]
