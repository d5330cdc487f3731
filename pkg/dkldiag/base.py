from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

# A parameter value: a float64 ndarray, or a tape node while differentiating.
Array = Any


class TraceRecord(BaseModel):
    """One optimization step of a training run, written as one JSON line."""

    step: int = Field(..., ge=0, description="0-based optimizer step")
    total: float = Field(..., description="Training objective (LML or ELBO), higher is better")
    data_fit: float = Field(..., description="Data-fit term (-1/2 y^T K^-1 y, or expected log-likelihood)")
    complexity: float = Field(..., description="Complexity term (-1/2 log|K|, or -KL)")
    sigma_f2: float = Field(..., description="Signal variance")
    sigma_n2: Optional[float] = Field(None, description="Noise variance (Gaussian likelihoods only)")
    mean_abs_corr: Optional[float] = Field(None, description="Mean absolute prior correlation over training inputs")
    elbo: Optional[float] = Field(None, description="Evidence lower bound (variational runs)")
    expected_ll: Optional[float] = Field(None, description="Scaled expected log-likelihood (variational runs)")
    kl: Optional[float] = Field(None, description="KL(q(u) || p(u)) (variational runs)")

    model_config = ConfigDict(extra="forbid")

    def to_json_line(self) -> str:
        return self.model_dump_json(exclude_none=True)


class PosteriorPredictive(BaseModel):
    """Gaussian predictive at test inputs."""

    mean: np.ndarray = Field(..., description="Predictive mean, one entry per test input")
    var: np.ndarray = Field(..., description="Marginal predictive variances")
    cov: Optional[np.ndarray] = Field(None, description="Full predictive covariance when requested")
    includes_noise: bool = Field(default=False, description="Whether the observation noise is included")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(self.var, 0.0, None))
