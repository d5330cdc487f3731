"""
Cholesky factorization with adaptive jitter, SPD solves and log-determinants.

Every matrix in the package is a float64 ``numpy.ndarray`` (row-major); these helpers
are the only place that factorizes ``K + sigma_n^2 I`` and friends.
"""

import logging

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field, field_validator

logger = logging.getLogger(__name__)

__all__ = [
    "CholeskyError",
    "CholeskyFactor",
    "DimensionError",
    "DEFAULT_JITTER",
    "JITTER_CAP",
    "MAX_JITTER_RETRIES",
    "cholesky_with_jitter",
    "solve_posdef",
    "logdet",
]

DEFAULT_JITTER = 1e-6
JITTER_CAP = 1e-2
MAX_JITTER_RETRIES = 4
SYMMETRY_TOL = 1e-10


class CholeskyError(Exception):
    """Raised when a matrix cannot be factorized even at the jitter cap."""


class DimensionError(Exception):
    """Raised when matrix shapes do not agree."""


class CholeskyFactor(BaseModel):
    """Lower Cholesky factor of ``A + jitter_used * I``."""

    lower: np.ndarray = Field(..., description="Lower-triangular factor with positive diagonal")
    jitter_used: float = Field(default=0.0, ge=0.0, description="Absolute jitter added to the diagonal")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("lower")
    @classmethod
    def _check_lower(cls, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2 or value.shape[0] != value.shape[1]:
            raise DimensionError(f"Cholesky factor must be square, got shape {value.shape}")
        if not np.all(np.diag(value) > 0):
            raise CholeskyError("Cholesky factor must have a strictly positive diagonal")
        return value

    @property
    def size(self) -> int:
        return self.lower.shape[0]

    def reconstruct(self) -> np.ndarray:
        """Return ``L @ L.T``."""
        return self.lower @ self.lower.T


def _as_square(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"Expected a square matrix, got shape {A.shape}")
    return A


def cholesky_with_jitter(
    A: np.ndarray,
    base_jitter: float = DEFAULT_JITTER,
    max_retries: int = MAX_JITTER_RETRIES,
) -> CholeskyFactor:
    """
    Factorize a symmetric matrix, escalating diagonal jitter on failure.

    The first attempt adds no jitter. Each retry adds ``base_jitter * mean(diag(A))``
    multiplied by 10 per retry, never exceeding ``JITTER_CAP * mean(diag(A))``.

    Args:
        A: Symmetric matrix (symmetric to 1e-10 relative)
        base_jitter: Relative jitter of the first retry
        max_retries: Number of escalation steps after the jitter-free attempt

    Returns:
        CholeskyFactor: factor and the absolute jitter that was needed

    Raises:
        DimensionError: If ``A`` is not square
        CholeskyError: If ``A`` is not symmetric/finite or factorization fails at the cap
    """
    A = _as_square(A)
    n = A.shape[0]
    if n == 0:
        raise DimensionError("Cannot factorize an empty matrix")
    if not np.all(np.isfinite(A)):
        raise CholeskyError("Matrix contains non-finite entries")

    scale_ref = max(float(np.max(np.abs(A))), 1.0)
    if float(np.max(np.abs(A - A.T))) > SYMMETRY_TOL * scale_ref:
        raise CholeskyError("Matrix is not symmetric")

    mean_diag = float(np.mean(np.diag(A)))
    scale = mean_diag if mean_diag > 0 else 1.0
    cap = JITTER_CAP * scale

    jitters = [0.0] + [base_jitter * scale * 10.0**k for k in range(max_retries)]
    jitters = [j for j in jitters if j <= cap * (1.0 + 1e-12)]

    for attempt, jitter in enumerate(jitters):
        try:
            lower = scipy.linalg.cholesky(A + jitter * np.eye(n), lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.diag(lower) > 0):
            if jitter > 0:
                logger.debug(f"Cholesky needed jitter {jitter:.3e} after {attempt} retries (n={n})")
            return CholeskyFactor(lower=lower, jitter_used=jitter)

    logger.error(f"Cholesky factorization failed at jitter {jitters[-1]:.3e} (cap {cap:.3e}, n={n})")
    raise CholeskyError(f"Factorization failed at jitter {jitters[-1]:.3e}")


def solve_posdef(F: CholeskyFactor, B: np.ndarray) -> np.ndarray:
    """
    Solve ``(L L^T) X = B`` with two triangular solves.

    Raises:
        DimensionError: If ``B`` rows do not match the factor size
    """
    B = np.asarray(B, dtype=np.float64)
    if B.shape[0] != F.size:
        raise DimensionError(f"Right-hand side has {B.shape[0]} rows, factor has {F.size}")
    return scipy.linalg.cho_solve((F.lower, True), B, check_finite=False)


def logdet(F: CholeskyFactor) -> float:
    """Log-determinant of ``L L^T``: ``2 * sum(log L_ii)``."""
    return float(2.0 * np.sum(np.log(np.diag(F.lower))))
