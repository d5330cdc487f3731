"""
Posterior-predictive averaging over retained samples.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np
import scipy.special
import scipy.stats
from pydantic import BaseModel, ConfigDict, Field

from ..base import PosteriorPredictive
from ..core.random import RandomStream
from ..models.exact_gp import GpModel, predict
from ..models.svgp import SvgpModel, predict_classes, predict_observed
from .chain import ChainState, SamplerError

logger = logging.getLogger(__name__)

__all__ = [
    "MixturePredictive",
    "predictive_average",
]


class MixturePredictive(BaseModel):
    """
    Equal-weight mixture of per-sample predictives.

    Regression mixtures hold one Gaussian per sample and test point; classification
    mixtures hold one probability table per sample.
    """

    component_means: Optional[np.ndarray] = Field(None, description="Per-sample means (S x N*)")
    component_vars: Optional[np.ndarray] = Field(None, description="Per-sample variances (S x N*)")
    component_probs: Optional[np.ndarray] = Field(None, description="Per-sample class probabilities (S x N* x C)")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @classmethod
    def from_components(cls, predictives: Sequence[PosteriorPredictive]) -> "MixturePredictive":
        if not predictives:
            raise SamplerError("Cannot build a mixture from zero components")
        return cls(
            component_means=np.stack([p.mean for p in predictives]),
            component_vars=np.stack([p.var for p in predictives]),
        )

    @property
    def num_components(self) -> int:
        table = self.component_means if self.component_means is not None else self.component_probs
        return 0 if table is None else table.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.component_means.mean(axis=0)

    @property
    def var(self) -> np.ndarray:
        """Mixture variance: ``E[var + mean^2] - E[mean]^2``."""
        second = (self.component_vars + self.component_means**2).mean(axis=0)
        return np.clip(second - self.mean**2, 0.0, None)

    @property
    def probs(self) -> np.ndarray:
        return self.component_probs.mean(axis=0)

    def log_density(self, y: np.ndarray) -> np.ndarray:
        """Per-point log of the averaged Gaussian densities at ``y``."""
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        logpdf = scipy.stats.norm.logpdf(y[None, :], loc=self.component_means, scale=np.sqrt(self.component_vars))
        return scipy.special.logsumexp(logpdf, axis=0) - np.log(self.num_components)

    def as_gaussian(self) -> PosteriorPredictive:
        """Moment-matched Gaussian summary (mean and mixture variance)."""
        return PosteriorPredictive(mean=self.mean, var=self.var, includes_noise=True)


def predictive_average(
    chain: ChainState,
    template,
    X_star: np.ndarray,
    X: Optional[np.ndarray] = None,
    y: Optional[np.ndarray] = None,
    stream: Optional[RandomStream] = None,
    with_noise: bool = True,
) -> MixturePredictive:
    """
    Average the predictive over the chain's retained samples.

    Args:
        chain: Chain with at least one retained sample
        template: ``GpModel`` or ``SvgpModel`` whose parameter layout matches the samples
        X_star: Test inputs
        X: Training inputs (exact GP templates condition on them)
        y: Training targets (exact GP templates)
        stream: Monte Carlo draws for softmax likelihoods
        with_noise: Include observation noise in Gaussian components

    Raises:
        SamplerError: If the chain is empty or the template is unsupported
    """
    if not chain.samples:
        raise SamplerError("Chain has no retained samples")
    if isinstance(template, GpModel):
        if X is None or y is None:
            raise SamplerError("Exact GP predictives need the training data")
        components = [
            predict(template.from_params(theta), X, y, X_star, with_noise=with_noise) for theta in chain.samples
        ]
        return MixturePredictive.from_components(components)
    if isinstance(template, SvgpModel):
        models = [template.from_params(theta) for theta in chain.samples]
        if template.is_gaussian:
            return MixturePredictive.from_components([predict_observed(m, X_star) for m in models])
        stream = stream or RandomStream(0)
        probs: List[np.ndarray] = [predict_classes(m, X_star, stream.split(i)) for i, m in enumerate(models)]
        return MixturePredictive(component_probs=np.stack(probs))
    raise SamplerError(f"Unsupported model template {type(template).__name__}")
