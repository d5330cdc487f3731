"""
Feature-extractor pretraining and the plain neural-network baseline.

The network is trained together with a linear head: mean squared error for regression,
mean cross-entropy for classification. The same routine pretrains the extractor that
frozen-net variants (fDKL / fSVDKL) keep fixed afterwards.
"""

import logging
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple

import numpy as np
import scipy.special
from pydantic import BaseModel, ConfigDict, Field

from ..autodiff import OptimizerError, OptSchedule, ParamVector, ops, run_adam
from ..base import Array, PosteriorPredictive
from ..core.random import RandomStream, minibatch_indices
from .feature_net import FeatureNetParams, forward

logger = logging.getLogger(__name__)

__all__ = [
    "PretrainError",
    "LinearHead",
    "PretrainResult",
    "pretrain_feature_net",
    "NnBaseline",
    "fit_nn_baseline",
]

Task = Literal["regression", "classification"]


class PretrainError(Exception):
    """Raised on invalid pretraining data or a diverged pretraining run."""


class LinearHead(BaseModel):
    """Linear read-out ``h W^T + b`` on top of the features."""

    weight: Array = Field(..., description="Output weights (outputs x Q)")
    bias: Array = Field(..., description="Output bias (outputs)")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    def apply(self, H: Array) -> Array:
        return ops.add(ops.matmul(H, ops.transpose(self.weight)), self.bias)


class PretrainResult(BaseModel):
    """Trained extractor, its head and the loss curve."""

    net: FeatureNetParams
    head: LinearHead
    task: Task
    losses: List[float] = Field(default_factory=list, description="Training loss per step")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    def outputs(self, X: np.ndarray) -> np.ndarray:
        """Head outputs: predictions (regression) or logits (classification)."""
        return ops.value_of(self.head.apply(forward(self.net, np.asarray(X, dtype=np.float64))))


def _head_loss(outputs: Array, y: np.ndarray, task: Task) -> Array:
    if task == "regression":
        resid = ops.subtract(ops.reshape(outputs, (y.shape[0],)), y)
        return ops.mean(ops.square(resid))
    log_probs = ops.log_softmax(outputs, axis=1)
    return ops.negative(ops.mean(log_probs[np.arange(y.shape[0]), y]))


def pretrain_feature_net(
    net: FeatureNetParams,
    X: np.ndarray,
    y: np.ndarray,
    task: Task,
    schedule: OptSchedule,
    stream: RandomStream,
    num_classes: Optional[int] = None,
    batch_size: Optional[int] = None,
) -> PretrainResult:
    """
    Train ``net`` plus a fresh linear head.

    Args:
        net: Initial extractor weights
        X: Inputs (N x D)
        y: Targets (regression) or labels in ``0..C-1`` (classification)
        task: ``"regression"`` or ``"classification"``
        schedule: Steps, learning rate, decays and weight decay
        stream: Head initialization and minibatch order
        num_classes: Number of classes; inferred from ``y`` when omitted
        batch_size: Minibatch size (full batch when omitted)

    Raises:
        PretrainError: On malformed data or a non-finite loss
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y).reshape(-1)
    n = X.shape[0]
    if n == 0 or n != y.shape[0]:
        raise PretrainError(f"Need matching non-empty data, got {n} inputs and {y.shape[0]} targets")
    if task == "regression":
        y = y.astype(np.float64)
        outputs = 1
    else:
        y = y.astype(np.int64)
        outputs = num_classes if num_classes is not None else int(y.max()) + 1
        if y.min() < 0 or y.max() >= outputs:
            raise PretrainError(f"Labels must lie in 0..{outputs - 1}")
    batch = n if batch_size is None else int(batch_size)

    q = net.output_dim
    limit = np.sqrt(6.0 / (q + outputs))
    head = LinearHead(weight=stream.split(0).uniform((outputs, q), -limit, limit), bias=np.zeros(outputs))
    blocks: Dict[str, Any] = dict(net.blocks("net."))
    blocks.update({"head.W": head.weight, "head.b": head.bias})
    losses: List[float] = []

    def batch_loss(step: int):
        idx = minibatch_indices(stream.split(1), step, n, batch)
        Xb, yb = X[idx], y[idx]

        def loss(view: Mapping[str, Any]):
            H = forward(net.bind(view, "net."), Xb)
            out = LinearHead.model_construct(weight=view["head.W"], bias=view["head.b"]).apply(H)
            return _head_loss(out, yb, task), {}

        return loss

    def record(step: int, theta: ParamVector, value: float, aux: Mapping[str, float]) -> None:
        losses.append(value)
        if step % max(schedule.trace_every, 1) == 0:
            logger.debug(f"pretrain step {step}: loss={value:.5f}")

    logger.info(f"Pretraining feature net ({task}) on {n} points for {schedule.steps} steps")
    try:
        theta, _ = run_adam(
            None, ParamVector.from_blocks(blocks), schedule, callback=record, batch_loss=batch_loss
        )
    except OptimizerError as e:
        raise PretrainError(f"Pretraining diverged: {e}") from e
    view = theta.as_dict()
    trained = net.bind(view, "net.")
    trained = FeatureNetParams(layers=list(trained.layers))
    head = LinearHead(weight=view["head.W"], bias=view["head.b"])
    if losses:
        logger.info(f"Pretraining finished: loss={losses[-1]:.5f}")
    return PretrainResult(net=trained, head=head, task=task, losses=losses)


class NnBaseline(BaseModel):
    """
    Network trained with MSE or cross-entropy.

    For regression the noise variance is the maximum-likelihood estimate (mean squared
    training residual), which turns point predictions into a Gaussian predictive.
    """

    result: PretrainResult
    sigma_n2: Optional[float] = Field(None, gt=0, description="ML noise variance (regression only)")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    def predict(self, X_star: np.ndarray) -> PosteriorPredictive:
        if self.result.task != "regression":
            raise PretrainError("Gaussian predictions need a regression baseline")
        mean = self.result.outputs(X_star)[:, 0]
        return PosteriorPredictive(mean=mean, var=np.full(mean.shape, self.sigma_n2), includes_noise=True)

    def predict_probs(self, X_star: np.ndarray) -> np.ndarray:
        if self.result.task != "classification":
            raise PretrainError("Class probabilities need a classification baseline")
        logits = self.result.outputs(X_star)
        return np.exp(logits - scipy.special.logsumexp(logits, axis=1, keepdims=True))


def fit_nn_baseline(
    net: FeatureNetParams,
    X: np.ndarray,
    y: np.ndarray,
    task: Task,
    schedule: OptSchedule,
    stream: RandomStream,
    batch_size: Optional[int] = None,
    num_classes: Optional[int] = None,
) -> Tuple[NnBaseline, List[float]]:
    """Train the baseline and attach the ML noise estimate for regression."""
    result = pretrain_feature_net(net, X, y, task, schedule, stream, num_classes=num_classes, batch_size=batch_size)
    sigma_n2 = None
    if task == "regression":
        resid = result.outputs(X)[:, 0] - np.asarray(y, dtype=np.float64).reshape(-1)
        sigma_n2 = max(float(np.mean(resid**2)), 1e-10)
        logger.info(f"NN baseline ML noise variance: {sigma_n2:.5g}")
    return NnBaseline(result=result, sigma_n2=sigma_n2), result.losses
