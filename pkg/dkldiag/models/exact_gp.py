"""
Exact GP regression with a Gaussian likelihood.

The log marginal likelihood is tracked as its three parts::

    log p(y) = -1/2 y^T (K + s I)^-1 y  -  1/2 log|K + s I|  -  N/2 log 2pi
               (data fit)                   (complexity)         (constant)

Fits maximize the total with Adam over every kernel, network and noise block.
"""

import logging
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field

from ..autodiff import OptimizerError, OptSchedule, ParamVector, ops, run_adam
from ..base import Array, PosteriorPredictive, TraceRecord
from ..core.linalg import CholeskyError, cholesky_with_jitter
from ..core.random import RandomStream
from .feature_net import NetSpec, init_params
from .kernels import ArdSeParams, DeepKernel, KernelError, mean_abs_correlation

logger = logging.getLogger(__name__)

__all__ = [
    "ExactGpError",
    "TrainingDivergedError",
    "GpModel",
    "LmlBreakdown",
    "SIGNAL_VARIANCE_FLOOR",
    "lml_terms",
    "log_marginal_decomposed",
    "optimal_signal_variance",
    "with_signal_variance",
    "complexity_expansion",
    "predict",
    "fit_full_batch",
]

LOG_2PI = float(np.log(2.0 * np.pi))
SIGNAL_VARIANCE_FLOOR = 1e-10
NOISE_BLOCK = "likelihood.log_sigma_n2"
# mean_abs_corr in traces is computed over at most this many training inputs
TRACE_CORR_POINTS = 500


class ExactGpError(Exception):
    """Raised on invalid data for exact GP inference."""


class TrainingDivergedError(Exception):
    """Raised when the training objective becomes non-finite; carries the trace so far."""

    def __init__(self, message: str, trace: Sequence[TraceRecord] = ()):
        super().__init__(message)
        self.trace = list(trace)


class GpModel(BaseModel):
    """Zero-mean GP prior with SE or deep kernel and Gaussian noise ``sigma_n^2``."""

    kernel: Union[DeepKernel, ArdSeParams] = Field(..., description="Covariance function")
    log_sigma_n2: Array = Field(..., description="log noise variance")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @classmethod
    def se(cls, input_dim: int, shared: bool = False, log_sigma_n2: float = float(np.log(0.1))) -> "GpModel":
        """Plain SE model with default initialization."""
        return cls(kernel=ArdSeParams.default(input_dim, shared), log_sigma_n2=np.asarray(log_sigma_n2))

    @classmethod
    def deep(
        cls,
        spec: NetSpec,
        stream: Optional[RandomStream] = None,
        shared: bool = False,
        log_sigma_n2: float = -4.0,
    ) -> "GpModel":
        """DKL model: freshly initialized feature net plus an SE kernel over its features."""
        net = init_params(spec, stream)
        kernel = DeepKernel(base=ArdSeParams.default(spec.feature_dim, shared), net=net)
        return cls(kernel=kernel, log_sigma_n2=np.asarray(log_sigma_n2))

    @property
    def sigma_n2(self) -> float:
        return float(np.exp(ops.value_of(self.log_sigma_n2)))

    @property
    def sigma_f2(self) -> float:
        return self.kernel.signal_variance

    def blocks(self) -> Dict[str, Array]:
        out = self.kernel.blocks("kernel.")
        out[NOISE_BLOCK] = self.log_sigma_n2
        return out

    def bind(self, view: Mapping[str, Any]) -> "GpModel":
        return GpModel.model_construct(kernel=self.kernel.bind(view, "kernel."), log_sigma_n2=view[NOISE_BLOCK])

    def to_params(self) -> ParamVector:
        return ParamVector.from_blocks(self.blocks())

    def from_params(self, theta: ParamVector) -> "GpModel":
        """Concrete model holding the values of ``theta``."""
        bound = self.bind(theta.as_dict())
        return self.model_copy(update={"kernel": bound.kernel, "log_sigma_n2": bound.log_sigma_n2})


class LmlBreakdown(BaseModel):
    """Log marginal likelihood split into constant, data-fit and complexity terms."""

    total: float = Field(..., description="constant + data_fit + complexity")
    data_fit: float = Field(..., description="-1/2 y^T (K + sigma_n^2 I)^-1 y")
    complexity: float = Field(..., description="-1/2 log|K + sigma_n^2 I|")
    constant: float = Field(..., description="-N/2 log 2pi")

    model_config = ConfigDict(frozen=True)


def _check_data(X: np.ndarray, y: np.ndarray, allow_empty: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != y.shape[0]:
        raise ExactGpError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
    if X.shape[0] == 0 and not allow_empty:
        raise ExactGpError("Need at least one training point")
    if not np.all(np.isfinite(y)):
        raise ExactGpError("Targets must be finite")
    return X, y


def lml_terms(model: GpModel, X: Array, y: np.ndarray) -> Tuple[Array, Array, Array, float]:
    """
    Differentiable ``(total, data_fit, complexity, constant)``; ``model`` may be bound to tape nodes.

    One Cholesky factorization of ``K + sigma_n^2 I`` serves both terms.
    """
    n = y.shape[0]
    K = model.kernel.matrix(X)
    Ky = ops.add(K, ops.multiply(ops.exp(model.log_sigma_n2), np.eye(n)))
    L = ops.cholesky(Ky)
    alpha = ops.solve_triangular(L, y)
    data_fit = ops.multiply(-0.5, ops.sum(ops.square(alpha)))
    complexity = ops.multiply(-0.5, ops.logdet_from_cholesky(L))
    constant = -0.5 * n * LOG_2PI
    total = ops.add(ops.add(data_fit, complexity), constant)
    return total, data_fit, complexity, constant


def log_marginal_decomposed(model: GpModel, X: np.ndarray, y: np.ndarray) -> LmlBreakdown:
    """
    Log marginal likelihood and its decomposition.

    Raises:
        ExactGpError: If there is no data or ``y`` is not finite
        CholeskyError: If ``K + sigma_n^2 I`` cannot be factorized within the jitter cap
    """
    X, y = _check_data(X, y)
    _, data_fit, complexity, constant = lml_terms(model, X, y)
    data_fit = float(ops.value_of(data_fit))
    complexity = float(ops.value_of(complexity))
    return LmlBreakdown(
        total=constant + data_fit + complexity, data_fit=data_fit, complexity=complexity, constant=constant
    )


def _normalized_system(model: GpModel, X: np.ndarray) -> Tuple[np.ndarray, float]:
    """``K_hat = K / sigma_f^2`` and ``sigma_hat_n^2 = sigma_n^2 / sigma_f^2``."""
    sigma_f2 = model.sigma_f2
    K = ops.value_of(model.kernel.matrix(X))
    return K / sigma_f2, model.sigma_n2 / sigma_f2


def optimal_signal_variance(model: GpModel, X: np.ndarray, y: np.ndarray) -> float:
    """
    Signal variance maximizing the LML with ``K_hat`` and ``sigma_hat_n^2`` held fixed.

    ``sigma_f^2 = y^T (K_hat + sigma_hat_n^2 I)^-1 y / N``; substituting it sets the data-fit
    term to exactly ``-N/2``. All-zero targets give 0, which callers clamp to
    :data:`SIGNAL_VARIANCE_FLOOR`.
    """
    X, y = _check_data(X, y)
    if not np.any(y):
        return 0.0
    K_hat, noise_hat = _normalized_system(model, X)
    factor = cholesky_with_jitter(K_hat + noise_hat * np.eye(y.shape[0]))
    alpha = scipy.linalg.solve_triangular(factor.lower, y, lower=True, check_finite=False)
    return float(alpha @ alpha) / y.shape[0]


def with_signal_variance(model: GpModel, sigma_f2: float) -> GpModel:
    """Copy with ``sigma_f^2`` replaced, keeping ``sigma_hat_n^2 = sigma_n^2 / sigma_f^2`` fixed."""
    sigma_f2 = max(float(sigma_f2), SIGNAL_VARIANCE_FLOOR)
    log_sf2 = np.log(sigma_f2)
    shift = log_sf2 - float(ops.value_of(model.kernel.se.log_sigma_f2))
    se = model.kernel.se.model_copy(update={"log_sigma_f2": np.asarray(log_sf2)})
    return model.model_copy(
        update={
            "kernel": model.kernel.with_se(se),
            "log_sigma_n2": np.asarray(float(ops.value_of(model.log_sigma_n2)) + shift),
        }
    )


def complexity_expansion(model: GpModel, X: np.ndarray) -> Tuple[float, float]:
    """
    Split the complexity term as ``-N/2 log sigma_f^2 + complexity(K_hat + sigma_hat_n^2 I)``.

    The first part rewards small signal variance, the second rewards strongly correlated
    (near-singular) normalized kernels.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n == 0:
        raise ExactGpError("Need at least one input")
    K_hat, noise_hat = _normalized_system(model, X)
    factor = cholesky_with_jitter(K_hat + noise_hat * np.eye(n))
    scale_term = -0.5 * n * np.log(model.sigma_f2)
    shape_term = -float(np.sum(np.log(np.diag(factor.lower))))
    return float(scale_term), shape_term


def predict(
    model: GpModel,
    X: np.ndarray,
    y: np.ndarray,
    X_star: np.ndarray,
    with_noise: bool = False,
    full_cov: bool = False,
) -> PosteriorPredictive:
    """
    Closed-form GP posterior at ``X_star``.

    With no training data the prior is returned.

    Raises:
        CholeskyError: If ``K + sigma_n^2 I`` cannot be factorized
    """
    X, y = _check_data(X, y, allow_empty=True)
    X_star = np.asarray(X_star, dtype=np.float64)
    if X_star.ndim == 1:
        X_star = X_star[:, None]
    K_ss = ops.value_of(model.kernel.matrix(X_star))

    if X.shape[0] == 0:
        mean = np.zeros(X_star.shape[0])
        cov = K_ss.copy()
    else:
        K = ops.value_of(model.kernel.matrix(X))
        K_xs = ops.value_of(model.kernel.matrix(X, X_star))
        factor = cholesky_with_jitter(K + model.sigma_n2 * np.eye(X.shape[0]))
        alpha = scipy.linalg.solve_triangular(factor.lower, y, lower=True, check_finite=False)
        A = scipy.linalg.solve_triangular(factor.lower, K_xs, lower=True, check_finite=False)
        mean = A.T @ alpha
        cov = K_ss - A.T @ A
        cov = 0.5 * (cov + cov.T)

    if with_noise:
        cov = cov + model.sigma_n2 * np.eye(cov.shape[0])
    var = np.clip(np.diag(cov).copy(), 0.0, None)
    return PosteriorPredictive(mean=mean, var=var, cov=cov if full_cov else None, includes_noise=with_noise)


def _trace_record(step: int, theta: ParamVector, value: Mapping[str, float], model: GpModel, X_corr) -> TraceRecord:
    view = theta.as_dict()
    current = model.bind(view)
    try:
        corr = mean_abs_correlation(current.kernel, X_corr) if X_corr.shape[0] >= 2 else None
    except KernelError as e:
        logger.warning(f"Skipping mean_abs_corr at step {step}: {e}")
        corr = None
    return TraceRecord(
        step=step,
        total=value["total"],
        data_fit=value["data_fit"],
        complexity=value["complexity"],
        sigma_f2=float(np.exp(view["kernel.log_sigma_f2"])),
        sigma_n2=float(np.exp(view[NOISE_BLOCK])),
        mean_abs_corr=corr,
    )


def fit_full_batch(
    model: GpModel,
    X: np.ndarray,
    y: np.ndarray,
    schedule: OptSchedule,
    stream: Optional[RandomStream] = None,
    frozen: Tuple[str, ...] = (),
) -> Tuple[GpModel, List[TraceRecord]]:
    """
    Maximize the log marginal likelihood with Adam on all of ``theta``.

    Args:
        model: Initial model
        X: Training inputs (N x D)
        y: Training targets (N)
        schedule: Steps, learning rate, decays and weight decay
        stream: Used to pick the inputs ``mean_abs_corr`` is traced on when N is large
        frozen: Block-name prefixes to keep fixed (``"net."`` for a frozen extractor)

    Returns:
        (trained model, trace): the trace ends with a record for the returned parameters

    Raises:
        TrainingDivergedError: If the objective becomes non-finite or factorization fails
    """
    X, y = _check_data(X, y)
    n = X.shape[0]
    if n > TRACE_CORR_POINTS:
        stream = stream if stream is not None else RandomStream(0)
        X_corr = X[np.sort(stream.permutation(n)[:TRACE_CORR_POINTS])]
    else:
        X_corr = X

    trace: List[TraceRecord] = []

    def loss(view):
        total, data_fit, complexity, _ = lml_terms(model.bind(view), X, y)
        return ops.negative(total), {"data_fit": data_fit, "complexity": complexity}

    def record(step: int, theta: ParamVector, value: float, aux: Mapping[str, float]) -> None:
        if step % schedule.trace_every:
            return
        terms = {"total": -value, "data_fit": aux["data_fit"], "complexity": aux["complexity"]}
        trace.append(_trace_record(step, theta, terms, model, X_corr))
        logger.debug(f"step {step}: lml={-value:.4f} fit={aux['data_fit']:.4f} complexity={aux['complexity']:.4f}")

    logger.info(f"Fitting exact GP on {n} points for {schedule.steps} steps (lr={schedule.lr})")
    try:
        theta, _ = run_adam(loss, model.to_params(), schedule, frozen=frozen, callback=record)
    except (OptimizerError, CholeskyError) as e:
        logger.error(f"Exact GP training diverged: {e}")
        raise TrainingDivergedError(f"Exact GP training diverged: {e}", trace) from e

    fitted = model.from_params(theta)
    try:
        final = log_marginal_decomposed(fitted, X, y)
    except CholeskyError as e:
        raise TrainingDivergedError(f"Final parameters cannot be factorized: {e}", trace) from e
    if not np.isfinite(final.total):
        raise TrainingDivergedError("Final objective is not finite", trace)
    trace.append(
        _trace_record(
            schedule.steps,
            theta,
            {"total": final.total, "data_fit": final.data_fit, "complexity": final.complexity},
            model,
            X_corr,
        )
    )
    logger.info(f"Exact GP fit finished: lml={final.total:.4f} data_fit={final.data_fit:.4f}")
    return fitted, trace
