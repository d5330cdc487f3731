"""
ARD squared-exponential kernel, deep kernel composition and prior-correlation diagnostics.
"""

import logging
from abc import ABC, abstractmethod
from typing import Any, Dict, Mapping, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..autodiff import ops
from ..base import Array
from .feature_net import FeatureNetParams, forward

logger = logging.getLogger(__name__)

__all__ = [
    "KernelError",
    "BaseKernel",
    "ArdSeParams",
    "DeepKernel",
    "se_kernel",
    "ard_se_matrix",
    "deep_kernel_matrix",
    "correlation_profile",
    "mean_abs_correlation",
]


class KernelError(Exception):
    """Raised on kernel dimension mismatches or degenerate signal variance."""


def se_kernel(log_sigma_f2: Array, log_lengthscales: Array, A: Array, B: Array) -> Array:
    """
    ``sigma_f^2 * exp(-1/2 sum_d (a_d - b_d)^2 / l_d^2)`` for all row pairs.

    Squared distances use ``|a|^2 + |b|^2 - 2 a.b`` clamped at zero. Works on plain arrays
    and tape nodes alike.
    """
    lengthscales = ops.exp(ops.multiply(0.5, log_lengthscales))
    As = ops.divide(A, lengthscales)
    Bs = ops.divide(B, lengthscales)
    sq_a = ops.sum(ops.square(As), axis=1, keepdims=True)
    sq_b = ops.reshape(ops.sum(ops.square(Bs), axis=1), (1, B.shape[0]))
    cross = ops.matmul(As, ops.transpose(Bs))
    dist = ops.clamp_min(ops.subtract(ops.add(sq_a, sq_b), ops.multiply(2.0, cross)), 0.0)
    return ops.multiply(ops.exp(log_sigma_f2), ops.exp(ops.multiply(-0.5, dist)))


class BaseKernel(BaseModel, ABC):
    """
    A stationary SE kernel applied to (possibly learned) features.

    Subclasses provide the feature map and the parameter-block layout used for
    optimization and sampling.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    @abstractmethod
    def se(self) -> "ArdSeParams":
        """The SE part acting in feature space."""

    @abstractmethod
    def features(self, X: Array) -> Array:
        """Map inputs to the space the SE kernel acts on."""

    @abstractmethod
    def blocks(self, prefix: str = "kernel.") -> Dict[str, Array]:
        """Named parameter blocks."""

    @abstractmethod
    def bind(self, view: Mapping[str, Any], prefix: str = "kernel.") -> "BaseKernel":
        """Copy with parameters taken from ``view``."""

    @abstractmethod
    def with_se(self, se: "ArdSeParams") -> "BaseKernel":
        """Copy with the SE part replaced."""

    @property
    def signal_variance(self) -> float:
        return float(np.exp(ops.value_of(self.se.log_sigma_f2)))

    def matrix(self, A: Array, B: Optional[Array] = None) -> Array:
        """Kernel matrix between the rows of ``A`` and ``B`` (``B = A`` if omitted)."""
        B = A if B is None else B
        return self.feature_matrix(self.features(A), self.features(B))

    def feature_matrix(self, FA: Array, FB: Array) -> Array:
        """Kernel matrix between rows already in feature space."""
        return se_kernel(self.se.log_sigma_f2, self.se.log_lengthscales, FA, FB)


class ArdSeParams(BaseKernel):
    """ARD squared-exponential kernel on raw inputs."""

    log_sigma_f2: Array = Field(..., description="log signal variance")
    log_lengthscales: Array = Field(..., description="log l_d^2 per dimension (length 1 when shared)")

    @model_validator(mode="after")
    def _check_finite(self) -> "ArdSeParams":
        for name in ("log_sigma_f2", "log_lengthscales"):
            value = getattr(self, name)
            if isinstance(value, np.ndarray) and not np.all(np.isfinite(value)):
                raise KernelError(f"{name} must be finite")
        return self

    @classmethod
    def default(
        cls, dim: int, shared: bool = False, log_sigma_f2: float = 0.0, log_lengthscale: float = 0.0
    ) -> "ArdSeParams":
        """Kernel with unit signal variance and unit lengthscales unless overridden."""
        return cls(
            log_sigma_f2=np.asarray(float(log_sigma_f2)),
            log_lengthscales=np.full(1 if shared else dim, float(log_lengthscale)),
        )

    @property
    def se(self) -> "ArdSeParams":
        return self

    @property
    def shared(self) -> bool:
        return self.log_lengthscales.shape[0] == 1

    def features(self, X: Array) -> Array:
        return X

    def blocks(self, prefix: str = "kernel.") -> Dict[str, Array]:
        return {f"{prefix}log_sigma_f2": self.log_sigma_f2, f"{prefix}log_lengthscales": self.log_lengthscales}

    def bind(self, view: Mapping[str, Any], prefix: str = "kernel.") -> "ArdSeParams":
        return ArdSeParams.model_construct(
            log_sigma_f2=view[f"{prefix}log_sigma_f2"], log_lengthscales=view[f"{prefix}log_lengthscales"]
        )

    def with_se(self, se: "ArdSeParams") -> "ArdSeParams":
        return se


class DeepKernel(BaseKernel):
    """SE kernel on the features of a neural network: ``k(g(x), g(x'))``."""

    base: ArdSeParams = Field(..., description="SE kernel over the Q-dimensional feature space")
    net: FeatureNetParams = Field(..., description="Feature extractor weights")

    @model_validator(mode="after")
    def _check_widths(self) -> "DeepKernel":
        if not self.base.shared and self.base.log_lengthscales.shape[0] != self.net.output_dim:
            raise KernelError(
                f"Network outputs {self.net.output_dim} features, kernel has "
                f"{self.base.log_lengthscales.shape[0]} lengthscales"
            )
        return self

    @property
    def se(self) -> ArdSeParams:
        return self.base

    def features(self, X: Array) -> Array:
        return forward(self.net, X)

    def blocks(self, prefix: str = "kernel.") -> Dict[str, Array]:
        out = self.base.blocks(prefix)
        out.update(self.net.blocks("net."))
        return out

    def bind(self, view: Mapping[str, Any], prefix: str = "kernel.") -> "DeepKernel":
        return DeepKernel.model_construct(base=self.base.bind(view, prefix), net=self.net.bind(view, "net."))

    def with_se(self, se: ArdSeParams) -> "DeepKernel":
        return self.model_copy(update={"base": se})


def _check_columns(M: Array, width: int, what: str) -> None:
    if len(M.shape) != 2 or M.shape[1] != width:
        raise KernelError(f"{what} must have {width} columns, got shape {M.shape}")


def ard_se_matrix(params: ArdSeParams, A: Array, B: Array) -> Array:
    """
    ARD SE kernel matrix between the rows of ``A`` (N x Q) and ``B`` (M x Q).

    Raises:
        KernelError: If column counts disagree with each other or with the lengthscales
    """
    if len(A.shape) != 2 or len(B.shape) != 2 or A.shape[1] != B.shape[1]:
        raise KernelError(f"Input shapes {A.shape} and {B.shape} are incompatible")
    if not params.shared:
        _check_columns(A, params.log_lengthscales.shape[0], "Inputs")
    return se_kernel(params.log_sigma_f2, params.log_lengthscales, A, B)


def deep_kernel_matrix(k: DeepKernel, A: Array, B: Array) -> Array:
    """Deep kernel matrix: ``ard_se_matrix(base, g(A), g(B))``."""
    if len(A.shape) != 2 or len(B.shape) != 2 or A.shape[1] != B.shape[1]:
        raise KernelError(f"Input shapes {A.shape} and {B.shape} are incompatible")
    _check_columns(A, k.net.input_dim, "Inputs")
    return ard_se_matrix(k.base, forward(k.net, A), forward(k.net, B))


def _kernel_values(k: BaseKernel, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    if isinstance(k, DeepKernel):
        return ops.value_of(deep_kernel_matrix(k, A, B))
    return ops.value_of(ard_se_matrix(k.se, A, B))


def correlation_profile(k: BaseKernel, x_ref: np.ndarray, X_grid: np.ndarray) -> np.ndarray:
    """
    Prior correlation ``rho(x) = k(x, x_ref) / sigma_f^2`` over the grid rows.

    Raises:
        KernelError: If the signal variance is zero
    """
    sigma_f2 = k.signal_variance
    if not sigma_f2 > 0:
        raise KernelError("Correlation is undefined for zero signal variance")
    X_grid = np.asarray(X_grid, dtype=np.float64)
    if X_grid.ndim == 1:
        X_grid = X_grid[:, None]
    x_ref = np.asarray(x_ref, dtype=np.float64).reshape(1, -1)
    return _kernel_values(k, X_grid, x_ref)[:, 0] / sigma_f2


def mean_abs_correlation(k: BaseKernel, X: np.ndarray) -> float:
    """
    Mean of ``|k(x_i, x_j)| / sigma_f^2`` over pairs ``i < j``.

    Raises:
        KernelError: If fewer than two inputs are given or the signal variance is zero
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n < 2:
        raise KernelError(f"Need at least two inputs, got {n}")
    sigma_f2 = k.signal_variance
    if not sigma_f2 > 0:
        raise KernelError("Correlation is undefined for zero signal variance")
    K = _kernel_values(k, X, X)
    upper = np.triu_indices(n, 1)
    return float(np.mean(np.abs(K[upper])) / sigma_f2)
