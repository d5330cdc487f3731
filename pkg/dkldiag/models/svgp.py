"""
Sparse variational GP (SVGP / SVDKL) with whitened inducing variables.

For each output ``c`` the variational posterior is stored whitened: ``u_c = L_zz v_c`` with
``q(v_c) = N(m_c, L_c L_c^T)`` and ``L_zz`` the Cholesky factor of ``K(Z, Z)``. The
unwhitened moments are ``m = L_zz m_c`` and ``S = L_zz L_c L_c^T L_zz^T``.

``L_c`` is parameterized by its strictly lower part and the log of its diagonal, so the
diagonal stays positive during unconstrained optimization.
"""

import logging
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.special
from pydantic import BaseModel, ConfigDict, Field, model_validator
from sklearn.cluster import KMeans

from ..autodiff import OptimizerError, OptSchedule, ParamVector, ops, run_adam
from ..base import Array, PosteriorPredictive, TraceRecord
from ..core.linalg import CholeskyError, cholesky_with_jitter
from ..core.random import RandomStream, minibatch_indices
from .exact_gp import TRACE_CORR_POINTS, TrainingDivergedError
from .kernels import ArdSeParams, DeepKernel, KernelError, mean_abs_correlation

logger = logging.getLogger(__name__)

__all__ = [
    "SvgpError",
    "MAX_INDUCING",
    "VariationalState",
    "GaussianLikelihood",
    "SoftmaxLikelihood",
    "LikelihoodSpec",
    "SvgpModel",
    "ElboTerms",
    "kl_whitened",
    "gaussian_elbo_terms",
    "softmax_elbo_terms",
    "predict_latent",
    "elbo_gaussian",
    "elbo_softmax_mc",
    "init_inducing_kmeans",
    "fit_svgp",
    "optimal_gaussian_variational",
    "predict_classes",
    "predict_observed",
]

LOG_2PI = float(np.log(2.0 * np.pi))
MAX_INDUCING = 512
VARIANCE_FLOOR = 1e-12


class SvgpError(Exception):
    """Raised on invalid variational states, likelihood mismatches or bad labels."""


class VariationalState(BaseModel):
    """Inducing inputs and whitened ``q(u)`` for ``C`` independent outputs."""

    Z: Array = Field(..., description="Inducing inputs in feature space (M x Q)")
    q_mu: Array = Field(..., description="Whitened means (C x M)")
    q_sqrt_offdiag: Array = Field(..., description="Strictly lower part of the whitened factors (C x M x M)")
    q_log_diag: Array = Field(..., description="Log of the factors' diagonals (C x M)")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="after")
    def _check_shapes(self) -> "VariationalState":
        m = self.Z.shape[0]
        if m < 1:
            raise SvgpError("Need at least one inducing point")
        c = self.q_mu.shape[0]
        if self.q_mu.shape != (c, m) or self.q_log_diag.shape != (c, m) or self.q_sqrt_offdiag.shape != (c, m, m):
            raise SvgpError(
                f"Variational shapes disagree with M={m}: q_mu {self.q_mu.shape}, "
                f"q_log_diag {self.q_log_diag.shape}, q_sqrt_offdiag {self.q_sqrt_offdiag.shape}"
            )
        return self

    @classmethod
    def prior(cls, Z: np.ndarray, num_outputs: int = 1) -> "VariationalState":
        """``m = 0, L = I``: ``q(u)`` equals the prior."""
        Z = np.asarray(Z, dtype=np.float64)
        m = Z.shape[0]
        return cls(
            Z=Z,
            q_mu=np.zeros((num_outputs, m)),
            q_sqrt_offdiag=np.zeros((num_outputs, m, m)),
            q_log_diag=np.zeros((num_outputs, m)),
        )

    @classmethod
    def from_factors(cls, Z: np.ndarray, means: np.ndarray, factors: np.ndarray) -> "VariationalState":
        """
        Build a state from whitened means (C x M) and lower factors (C x M x M).

        Raises:
            SvgpError: If a factor is not lower-triangular with positive diagonal
        """
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        factors = np.asarray(factors, dtype=np.float64)
        if factors.ndim == 2:
            factors = factors[None]
        diags = np.stack([np.diag(f) for f in factors])
        if np.any(diags <= 0):
            raise SvgpError("Whitened covariance factors need a positive diagonal")
        if any(np.any(np.triu(f, 1) != 0) for f in factors):
            raise SvgpError("Whitened covariance factors must be lower-triangular")
        return cls(
            Z=np.asarray(Z, dtype=np.float64),
            q_mu=means,
            q_sqrt_offdiag=np.stack([np.tril(f, -1) for f in factors]),
            q_log_diag=np.log(diags),
        )

    @property
    def num_inducing(self) -> int:
        return self.Z.shape[0]

    @property
    def num_outputs(self) -> int:
        return self.q_mu.shape[0]

    def lower_factors(self) -> List[Array]:
        """The whitened factors ``L_c``, differentiable when the state holds tape nodes."""
        return [
            ops.add(
                ops.tril(self.q_sqrt_offdiag[c], -1),
                ops.diag_embed(ops.exp(self.q_log_diag[c])),
            )
            for c in range(self.num_outputs)
        ]

    def blocks(self, prefix: str = "variational.") -> Dict[str, Array]:
        return {
            f"{prefix}Z": self.Z,
            f"{prefix}q_mu": self.q_mu,
            f"{prefix}q_sqrt_offdiag": self.q_sqrt_offdiag,
            f"{prefix}q_log_diag": self.q_log_diag,
        }

    def bind(self, view: Mapping[str, Any], prefix: str = "variational.") -> "VariationalState":
        return VariationalState.model_construct(
            Z=view[f"{prefix}Z"],
            q_mu=view[f"{prefix}q_mu"],
            q_sqrt_offdiag=view[f"{prefix}q_sqrt_offdiag"],
            q_log_diag=view[f"{prefix}q_log_diag"],
        )


class GaussianLikelihood(BaseModel):
    """``y = f + eps``, ``eps ~ N(0, sigma_n^2)``."""

    kind: Literal["gaussian"] = "gaussian"
    log_sigma_n2: Array = Field(default_factory=lambda: np.asarray(-4.0), description="log noise variance")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    def num_outputs(self) -> int:
        return 1

    @property
    def sigma_n2(self) -> float:
        return float(np.exp(ops.value_of(self.log_sigma_n2)))


class SoftmaxLikelihood(BaseModel):
    """Categorical likelihood over ``softmax(f_1, ..., f_C)``."""

    kind: Literal["softmax"] = "softmax"
    num_classes: int = Field(..., ge=1, description="Number of classes C")
    mc_samples: int = Field(default=10, ge=1, description="Reparameterized samples per ELBO estimate")

    model_config = ConfigDict(frozen=True)

    @property
    def num_outputs(self) -> int:
        return self.num_classes


LikelihoodSpec = Union[GaussianLikelihood, SoftmaxLikelihood]


class SvgpModel(BaseModel):
    """Kernel, variational state and likelihood of a sparse variational GP."""

    kernel: Union[DeepKernel, ArdSeParams] = Field(..., description="Covariance function")
    variational: VariationalState = Field(..., description="Inducing inputs and q(u)")
    likelihood: LikelihoodSpec = Field(..., discriminator="kind", description="Observation model")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="after")
    def _check_widths(self) -> "SvgpModel":
        width = self.variational.Z.shape[1]
        if isinstance(self.kernel, DeepKernel):
            expected = self.kernel.net.output_dim
        elif not self.kernel.shared:
            expected = self.kernel.log_lengthscales.shape[0]
        else:
            expected = width
        if width != expected:
            raise SvgpError(f"Inducing inputs have {width} columns, kernel features have {expected}")
        if self.variational.num_outputs != self.likelihood.num_outputs:
            raise SvgpError(
                f"Variational state has {self.variational.num_outputs} outputs, "
                f"likelihood expects {self.likelihood.num_outputs}"
            )
        return self

    @classmethod
    def create(cls, kernel, Z: np.ndarray, likelihood: LikelihoodSpec) -> "SvgpModel":
        """Model with ``q(u)`` at the prior."""
        return cls(
            kernel=kernel,
            variational=VariationalState.prior(Z, likelihood.num_outputs),
            likelihood=likelihood,
        )

    @property
    def is_gaussian(self) -> bool:
        return isinstance(self.likelihood, GaussianLikelihood)

    def blocks(self) -> Dict[str, Array]:
        out = self.kernel.blocks("kernel.")
        out.update(self.variational.blocks())
        if self.is_gaussian:
            out["likelihood.log_sigma_n2"] = self.likelihood.log_sigma_n2
        return out

    def bind(self, view: Mapping[str, Any]) -> "SvgpModel":
        likelihood = self.likelihood
        if self.is_gaussian:
            likelihood = GaussianLikelihood.model_construct(log_sigma_n2=view["likelihood.log_sigma_n2"])
        return SvgpModel.model_construct(
            kernel=self.kernel.bind(view, "kernel."),
            variational=self.variational.bind(view),
            likelihood=likelihood,
        )

    def to_params(self) -> ParamVector:
        return ParamVector.from_blocks(self.blocks())

    def from_params(self, theta: ParamVector) -> "SvgpModel":
        bound = self.bind(theta.as_dict())
        return self.model_copy(
            update={"kernel": bound.kernel, "variational": bound.variational, "likelihood": bound.likelihood}
        )


class ElboTerms(BaseModel):
    """ELBO and its parts for one (mini)batch."""

    elbo: float = Field(..., description="expected_ll - kl")
    expected_ll: float = Field(..., description="Expected log-likelihood scaled by N_total / batch size")
    kl: float = Field(..., description="KL(q(u) || p(u)), counted once")

    model_config = ConfigDict(frozen=True)


def _kl(state: VariationalState) -> Array:
    m = state.num_inducing
    total = ops.sum(ops.square(state.q_mu))
    total = ops.add(total, ops.sum(ops.square(ops.tril(state.q_sqrt_offdiag, -1))))
    total = ops.add(total, ops.sum(ops.exp(ops.multiply(2.0, state.q_log_diag))))
    total = ops.subtract(total, ops.multiply(2.0, ops.sum(state.q_log_diag)))
    return ops.multiply(0.5, ops.subtract(total, float(m * state.num_outputs)))


def kl_whitened(state: VariationalState) -> float:
    """
    ``sum_c 1/2 (|m_c|^2 + |L_c|_F^2 - M - 2 sum_i log L_c,ii)``.

    Equals ``KL(N(m, S) || N(0, K_zz))`` for the unwhitened moments.
    """
    return float(ops.value_of(_kl(state)))


def _latent_moments(model: SvgpModel, X: Array) -> Tuple[Array, Array]:
    """Differentiable per-output means and variances (C x N) at ``X``."""
    kernel = model.kernel
    state = model.variational
    F = kernel.features(X)
    Z = state.Z
    K_zz = kernel.feature_matrix(Z, Z)
    L = ops.cholesky(K_zz)
    K_zx = kernel.feature_matrix(Z, F)
    A = ops.solve_triangular(L, K_zx)
    n = X.shape[0]
    prior_var = ops.multiply(ops.exp(kernel.se.log_sigma_f2), np.ones(n))
    base_var = ops.subtract(prior_var, ops.sum(ops.square(A), axis=0))
    means, variances = [], []
    for c, Lc in enumerate(state.lower_factors()):
        means.append(ops.matmul(ops.transpose(A), state.q_mu[c]))
        LtA = ops.matmul(ops.transpose(Lc), A)
        variances.append(ops.add(base_var, ops.sum(ops.square(LtA), axis=0)))
    return ops.stack(means, axis=0), ops.stack(variances, axis=0)


def _as_inputs(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X[:, None] if X.ndim == 1 else X


def predict_latent(model: SvgpModel, X_star: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Latent predictive moments, one row per output.

    Returns:
        (means, variances): arrays of shape (C, N*)

    Raises:
        CholeskyError: If ``K(Z, Z)`` cannot be factorized
    """
    means, variances = _latent_moments(model, _as_inputs(X_star))
    return ops.value_of(means), ops.value_of(variances)


def gaussian_elbo_terms(model: SvgpModel, X: Array, y: np.ndarray, n_total: int) -> Tuple[Array, Array, Array]:
    means, variances = _latent_moments(model, X)
    log_sn2 = model.likelihood.log_sigma_n2
    inv_sn2 = ops.exp(ops.negative(log_sn2))
    resid = ops.subtract(y, means[0])
    per_point = ops.add(ops.square(resid), variances[0])
    ell = ops.add(
        ops.multiply(-0.5 * y.shape[0], ops.add(log_sn2, LOG_2PI)),
        ops.multiply(-0.5, ops.multiply(inv_sn2, ops.sum(per_point))),
    )
    ell = ops.multiply(n_total / y.shape[0], ell)
    kl = _kl(model.variational)
    return ops.subtract(ell, kl), ell, kl


def softmax_elbo_terms(
    model: SvgpModel, X: Array, labels: np.ndarray, n_total: int, stream: RandomStream
) -> Tuple[Array, Array, Array]:
    means, variances = _latent_moments(model, X)
    num_classes = model.likelihood.num_classes
    samples = model.likelihood.mc_samples
    batch = labels.shape[0]
    eps = stream.normal((samples, num_classes, batch))
    f = ops.add(means, ops.multiply(ops.sqrt(ops.clamp_min(variances, VARIANCE_FLOOR)), eps))
    log_probs = ops.log_softmax(f, axis=1)
    picked = log_probs[:, labels, np.arange(batch)]
    ell = ops.multiply(n_total / (batch * samples), ops.sum(picked))
    kl = _kl(model.variational)
    return ops.subtract(ell, kl), ell, kl


def _check_batch(X, y, n_total: int) -> Tuple[np.ndarray, np.ndarray]:
    X = _as_inputs(X)
    y = np.asarray(y).reshape(-1)
    if X.shape[0] == 0:
        raise SvgpError("Batch must not be empty")
    if X.shape[0] != y.shape[0]:
        raise SvgpError(f"Batch has {X.shape[0]} inputs but {y.shape[0]} targets")
    if n_total < X.shape[0]:
        raise SvgpError(f"N_total={n_total} is smaller than the batch ({X.shape[0]})")
    return X, y


def _check_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    if not np.all(np.equal(np.mod(labels, 1), 0)):
        raise SvgpError("Labels must be integers")
    labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise SvgpError(f"Labels must lie in 0..{num_classes - 1}, got range [{labels.min()}, {labels.max()}]")
    return labels


def elbo_gaussian(model: SvgpModel, X_batch: np.ndarray, y_batch: np.ndarray, n_total: int) -> ElboTerms:
    """
    Minibatch ELBO for the Gaussian likelihood with the analytic expected log-density.

    ``(N_total / B) * sum_i [log N(y_i | mu_i, s) - v_i / (2 s)] - KL``

    Raises:
        SvgpError: If the likelihood is not Gaussian or the batch is malformed
    """
    if not model.is_gaussian:
        raise SvgpError("elbo_gaussian needs a Gaussian likelihood")
    if not np.isfinite(model.likelihood.sigma_n2) or model.likelihood.sigma_n2 <= 0:
        raise SvgpError("Noise variance must be positive")
    X, y = _check_batch(X_batch, y_batch, n_total)
    elbo, ell, kl = gaussian_elbo_terms(model, X, y.astype(np.float64), n_total)
    return ElboTerms(elbo=float(ops.value_of(elbo)), expected_ll=float(ops.value_of(ell)), kl=float(ops.value_of(kl)))


def elbo_softmax_mc(
    model: SvgpModel, X_batch: np.ndarray, labels: np.ndarray, n_total: int, stream: RandomStream
) -> ElboTerms:
    """
    Monte Carlo ELBO for the softmax likelihood using ``f = mean + sqrt(var) * eps``.

    Raises:
        SvgpError: If the likelihood is not softmax or a label is out of range
    """
    if model.is_gaussian:
        raise SvgpError("elbo_softmax_mc needs a softmax likelihood")
    X, labels = _check_batch(X_batch, labels, n_total)
    labels = _check_labels(labels, model.likelihood.num_classes)
    elbo, ell, kl = softmax_elbo_terms(model, X, labels, n_total, stream)
    return ElboTerms(elbo=float(ops.value_of(elbo)), expected_ll=float(ops.value_of(ell)), kl=float(ops.value_of(kl)))


def init_inducing_kmeans(
    X_features: np.ndarray, num_inducing: int, stream: RandomStream, subset_size: Optional[int] = None
) -> np.ndarray:
    """
    Inducing inputs from Lloyd's k-means (k-means++ seeding, at most 25 iterations).

    Args:
        X_features: Points to cluster (N x Q), usually network features of the training inputs
        num_inducing: Number of centers M
        stream: Seeds the optional subset draw and the k-means++ initialization
        subset_size: Cluster a random subset of this many points when N is larger

    Raises:
        SvgpError: If M exceeds the number of points
    """
    X = _as_inputs(X_features)
    n = X.shape[0]
    if num_inducing < 1:
        raise SvgpError(f"Need at least one inducing point, got {num_inducing}")
    if subset_size is not None and n > subset_size:
        X = X[np.sort(stream.split(0).permutation(n)[:subset_size])]
        n = subset_size
    if num_inducing > n:
        raise SvgpError(f"Cannot place {num_inducing} inducing points with {n} data points")
    kmeans = KMeans(
        n_clusters=num_inducing,
        init="k-means++",
        n_init=1,
        max_iter=25,
        algorithm="lloyd",
        random_state=stream.split(1).sklearn_seed(),
    )
    kmeans.fit(X)
    logger.debug(f"k-means placed {num_inducing} inducing points after {kmeans.n_iter_} iterations")
    return np.asarray(kmeans.cluster_centers_, dtype=np.float64)


def optimal_gaussian_variational(model: SvgpModel, X: np.ndarray, y: np.ndarray) -> SvgpModel:
    """
    Copy of ``model`` with the optimal whitened ``q(u)`` for a Gaussian likelihood.

    With ``A = L_zz^-1 K(Z, X)``: ``S = (I + A A^T / s)^-1`` and ``m = S A y / s``.
    """
    if not model.is_gaussian:
        raise SvgpError("The closed-form optimum exists only for the Gaussian likelihood")
    X = _as_inputs(X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    kernel = model.kernel
    Z = ops.value_of(model.variational.Z)
    F = ops.value_of(kernel.features(X))
    L = cholesky_with_jitter(ops.value_of(kernel.feature_matrix(Z, Z))).lower
    A = scipy.linalg.solve_triangular(L, ops.value_of(kernel.feature_matrix(Z, F)), lower=True, check_finite=False)
    inv_sn2 = 1.0 / model.likelihood.sigma_n2
    m = Z.shape[0]
    precision = cholesky_with_jitter(np.eye(m) + inv_sn2 * (A @ A.T))
    S = scipy.linalg.cho_solve((precision.lower, True), np.eye(m))
    S = 0.5 * (S + S.T)
    mean = S @ (inv_sn2 * (A @ y))
    factor = cholesky_with_jitter(S).lower
    state = VariationalState.from_factors(Z, mean[None, :], factor[None])
    return model.model_copy(update={"variational": state})


def predict_observed(model: SvgpModel, X_star: np.ndarray) -> PosteriorPredictive:
    """Gaussian predictive of ``y*`` (latent variance plus noise)."""
    if not model.is_gaussian:
        raise SvgpError("predict_observed needs a Gaussian likelihood")
    means, variances = predict_latent(model, X_star)
    var = np.clip(variances[0], 0.0, None) + model.likelihood.sigma_n2
    return PosteriorPredictive(mean=means[0], var=var, includes_noise=True)


def predict_classes(
    model: SvgpModel, X_star: np.ndarray, stream: RandomStream, num_samples: Optional[int] = None
) -> np.ndarray:
    """
    Class probabilities averaged over Monte Carlo draws of the latent functions.

    Returns:
        Array of shape (N*, C) whose rows sum to one
    """
    if model.is_gaussian:
        raise SvgpError("predict_classes needs a softmax likelihood")
    samples = num_samples or model.likelihood.mc_samples
    means, variances = predict_latent(model, X_star)
    eps = stream.normal((samples,) + means.shape)
    f = means + np.sqrt(np.clip(variances, 0.0, None)) * eps
    probs = np.exp(f - scipy.special.logsumexp(f, axis=1, keepdims=True))
    return probs.mean(axis=0).T


def _trace_record(step: int, theta: ParamVector, terms: ElboTerms, model: SvgpModel, X_corr) -> TraceRecord:
    view = theta.as_dict()
    try:
        corr = mean_abs_correlation(model.bind(view).kernel, X_corr) if X_corr.shape[0] >= 2 else None
    except KernelError as e:
        logger.warning(f"Skipping mean_abs_corr at step {step}: {e}")
        corr = None
    return TraceRecord(
        step=step,
        total=terms.elbo,
        data_fit=terms.expected_ll,
        complexity=-terms.kl,
        sigma_f2=float(np.exp(view["kernel.log_sigma_f2"])),
        sigma_n2=float(np.exp(view["likelihood.log_sigma_n2"])) if model.is_gaussian else None,
        mean_abs_corr=corr,
        elbo=terms.elbo,
        expected_ll=terms.expected_ll,
        kl=terms.kl,
    )


def fit_svgp(
    model: SvgpModel,
    X: np.ndarray,
    y: np.ndarray,
    schedule: OptSchedule,
    stream: RandomStream,
    batch_size: Optional[int] = None,
    freeze_net: bool = False,
    frozen: Sequence[str] = (),
) -> Tuple[SvgpModel, List[TraceRecord]]:
    """
    Maximize the ELBO with Adam over hyperparameters, variational parameters, ``Z`` and net weights.

    Minibatches are contiguous slices of a fresh permutation each epoch; ``batch_size=None``
    (or N) trains on the full batch.

    Args:
        model: Initial model
        X: Training inputs
        y: Targets (regression) or integer labels (classification)
        schedule: Optimizer steps, learning rates and weight decay
        stream: Drives batch order and Monte Carlo draws
        batch_size: Minibatch size B <= N
        freeze_net: Keep the feature extractor fixed (fDKL / fSVDKL)
        frozen: Extra block-name prefixes to keep fixed

    Returns:
        (trained model, trace): the trace ends with the full-data ELBO of the returned parameters

    Raises:
        SvgpError: On invalid batch size or labels
        TrainingDivergedError: If the ELBO becomes non-finite
    """
    X = _as_inputs(X)
    y = np.asarray(y).reshape(-1)
    n = X.shape[0]
    if n == 0 or n != y.shape[0]:
        raise SvgpError(f"Need matching non-empty data, got {n} inputs and {y.shape[0]} targets")
    batch = n if batch_size is None else int(batch_size)
    if batch < 1 or batch > n:
        raise SvgpError(f"Batch size must be in 1..{n}, got {batch}")
    if model.variational.num_inducing > MAX_INDUCING:
        raise SvgpError(f"At most {MAX_INDUCING} inducing points are supported")
    if model.is_gaussian:
        y = y.astype(np.float64)
    else:
        y = _check_labels(y, model.likelihood.num_classes)

    frozen = tuple(frozen) + (("net.",) if freeze_net else ())
    X_corr = X if n <= TRACE_CORR_POINTS else X[np.sort(stream.split(2).permutation(n)[:TRACE_CORR_POINTS])]
    trace: List[TraceRecord] = []

    def batch_loss(step: int):
        idx = minibatch_indices(stream, step, n, batch)
        Xb, yb = X[idx], y[idx]

        def loss(view):
            bound = model.bind(view)
            if model.is_gaussian:
                elbo, ell, kl = gaussian_elbo_terms(bound, Xb, yb, n)
            else:
                elbo, ell, kl = softmax_elbo_terms(bound, Xb, yb, n, stream.split(1, step))
            aux = {"expected_ll": ell, "kl": kl}
            return ops.negative(elbo), aux

        return loss

    def record(step: int, theta: ParamVector, value: float, aux: Mapping[str, float]) -> None:
        if step % schedule.trace_every:
            return
        terms = ElboTerms(elbo=-value, expected_ll=aux["expected_ll"], kl=aux["kl"])
        trace.append(_trace_record(step, theta, terms, model, X_corr))

    logger.info(
        f"Fitting SVGP: N={n}, M={model.variational.num_inducing}, batch={batch}, "
        f"steps={schedule.steps}, frozen={list(frozen)}"
    )
    try:
        theta, _ = run_adam(None, model.to_params(), schedule, frozen=frozen, callback=record, batch_loss=batch_loss)
    except (OptimizerError, CholeskyError) as e:
        logger.error(f"SVGP training diverged: {e}")
        raise TrainingDivergedError(f"SVGP training diverged: {e}", trace) from e

    fitted = model.from_params(theta)
    try:
        if model.is_gaussian:
            final = elbo_gaussian(fitted, X, y, n)
        else:
            final = elbo_softmax_mc(fitted, X, y, n, stream.split(3))
    except (SvgpError, CholeskyError) as e:
        raise TrainingDivergedError(f"Final parameters give no ELBO: {e}", trace) from e
    if not np.isfinite(final.elbo):
        raise TrainingDivergedError("Final ELBO is not finite", trace)
    # full-data ELBO at the returned parameters
    trace.append(_trace_record(schedule.steps, theta, final, model, X_corr))
    logger.info(f"SVGP fit finished: elbo={final.elbo:.4f} kl={final.kl:.4f}")
    return fitted, trace
