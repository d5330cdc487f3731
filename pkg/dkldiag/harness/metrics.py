"""
Regression and classification metrics reported on normalized targets.
"""

import logging
from typing import Optional, Tuple

import numpy as np
import scipy.stats
from pydantic import BaseModel, ConfigDict, Field

logger = logging.getLogger(__name__)

__all__ = [
    "MetricsError",
    "MetricsReport",
    "rmse",
    "mean_gaussian_ll",
    "ece",
    "accuracy",
    "incorrect_only_ll",
    "mean_log_prob",
]

DEFAULT_ECE_BINS = 15


class MetricsError(Exception):
    """Raised on empty or mismatched metric inputs."""


class MetricsReport(BaseModel):
    """Metrics of one run; fields that do not apply to the task stay unset."""

    model_kind: str = Field(..., description="Model kind the run used")
    seed: int = Field(..., description="Run seed")
    num_train: int = Field(..., ge=0)
    num_test: int = Field(..., ge=0)
    train_rmse: Optional[float] = Field(None, ge=0)
    test_rmse: Optional[float] = Field(None, ge=0)
    train_ll: Optional[float] = Field(None, description="Mean Gaussian or categorical log likelihood on train")
    test_ll: Optional[float] = Field(None, description="Mean Gaussian or categorical log likelihood on test")
    train_accuracy: Optional[float] = Field(None, ge=0, le=1)
    test_accuracy: Optional[float] = Field(None, ge=0, le=1)
    test_ece: Optional[float] = Field(None, ge=0, le=1)
    incorrect_test_ll: Optional[float] = Field(None, description="Mean test LL over misclassified points")
    incorrect_test_ll_empty: Optional[bool] = Field(None, description="True when no test point was misclassified")
    objective_per_point: Optional[float] = Field(
        None, description="Final LML or ELBO divided by N (higher is better)"
    )
    final_data_fit: Optional[float] = None
    final_complexity: Optional[float] = None
    final_mean_abs_corr: Optional[float] = None
    final_sigma_f2: Optional[float] = None
    final_sigma_n2: Optional[float] = None
    acceptance_rate: Optional[float] = Field(None, ge=0, le=1, description="HMC acceptance rate")
    num_samples: Optional[int] = Field(None, ge=0, description="Retained posterior samples")

    model_config = ConfigDict(extra="forbid")


def _paired(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise MetricsError(f"Length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.size == 0:
        raise MetricsError("Empty input")
    return a, b


def rmse(means: np.ndarray, targets: np.ndarray) -> float:
    means, targets = _paired(means, targets)
    return float(np.sqrt(np.mean((means - targets) ** 2)))


def mean_gaussian_ll(means: np.ndarray, variances: np.ndarray, targets: np.ndarray) -> float:
    """Mean of ``log N(y | mu, v)``."""
    means, targets = _paired(means, targets)
    variances, _ = _paired(variances, targets)
    if np.any(variances <= 0):
        raise MetricsError("Predictive variances must be positive")
    return float(np.mean(scipy.stats.norm.logpdf(targets, loc=means, scale=np.sqrt(variances))))


def _check_probs(probs: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise MetricsError(f"Expected a non-empty (N x C) probability table, got shape {probs.shape}")
    if probs.shape[0] != labels.shape[0]:
        raise MetricsError(f"Length mismatch: {probs.shape[0]} rows vs {labels.shape[0]} labels")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise MetricsError("Labels out of range for the probability table")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise MetricsError("Probability rows must sum to 1")
    return probs, labels


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    probs, labels = _check_probs(probs, labels)
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def ece(probs: np.ndarray, labels: np.ndarray, bins: int = DEFAULT_ECE_BINS) -> float:
    """
    Expected calibration error of the max-probability predictions.

    Confidences fall into ``bins`` equal-width bins ``(lo, hi]``; the result is the
    count-weighted mean of ``|accuracy - confidence|`` over non-empty bins.
    """
    if bins < 1:
        raise MetricsError(f"Need at least one bin, got {bins}")
    probs, labels = _check_probs(probs, labels)
    confidence = probs.max(axis=1)
    correct = (np.argmax(probs, axis=1) == labels).astype(np.float64)
    index = np.clip(np.ceil(confidence * bins).astype(np.int64) - 1, 0, bins - 1)
    total = 0.0
    for b in range(bins):
        in_bin = index == b
        count = int(in_bin.sum())
        if count:
            total += count * abs(correct[in_bin].mean() - confidence[in_bin].mean())
    return float(total / labels.shape[0])


def mean_log_prob(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean log-probability of the true class."""
    probs, labels = _check_probs(probs, labels)
    picked = probs[np.arange(labels.shape[0]), labels]
    with np.errstate(divide="ignore"):
        return float(np.mean(np.log(picked)))


def incorrect_only_ll(probs: np.ndarray, labels: np.ndarray) -> Tuple[float, bool]:
    """
    Mean log-probability of the true class over misclassified points.

    Returns:
        (value, empty): ``(0.0, True)`` when every point is classified correctly
    """
    probs, labels = _check_probs(probs, labels)
    wrong = np.argmax(probs, axis=1) != labels
    if not wrong.any():
        return 0.0, True
    picked = probs[wrong, labels[wrong]]
    with np.errstate(divide="ignore"):
        return float(np.mean(np.log(picked))), False
