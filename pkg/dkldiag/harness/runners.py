"""
Experiment runners: one per model family, each turning a normalized training split
into a fitted predictor, a training trace and the parameters to checkpoint.
"""

import logging
from abc import ABC, abstractmethod
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..autodiff import OptSchedule, ParamVector, ops
from ..base import PosteriorPredictive, TraceRecord
from ..core.random import RandomStream
from ..models.exact_gp import GpModel, fit_full_batch, log_marginal_decomposed, predict
from ..models.feature_net import FeatureNetParams, init_params
from ..models.kernels import ArdSeParams, BaseKernel, DeepKernel
from ..models.nn_baseline import fit_nn_baseline, pretrain_feature_net
from ..models.svgp import (
    ElboTerms,
    GaussianLikelihood,
    SoftmaxLikelihood,
    SvgpModel,
    elbo_gaussian,
    elbo_softmax_mc,
    fit_svgp,
    init_inducing_kmeans,
    predict_classes,
    predict_observed,
)
from ..samplers import (
    ChainState,
    MixturePredictive,
    SamplerError,
    hmc_run,
    make_exact_dkl_potential,
    make_svgp_potential,
    predictive_average,
    sgld_run,
)
from .config import ExperimentConfig
from .data import Dataset

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentError",
    "FitOutcome",
    "BaseRunner",
    "ExactGpRunner",
    "SvgpRunner",
    "NnRunner",
    "HmcRunner",
    "SgldRunner",
]

DEFAULT_BATCH_SIZE = 64
EXACT_NOISE_INIT = {"exact-se": float(np.log(0.1))}
DEEP_NOISE_INIT = -4.0


class ExperimentError(Exception):
    """Raised when an experiment cannot be set up or one of its stages fails."""


class FitOutcome(BaseModel):
    """What a runner hands back to the experiment driver."""

    trace: List[TraceRecord] = Field(default_factory=list, description="Training or per-sample trace")
    objective: Optional[float] = Field(None, description="Final LML or ELBO on the whole training split")
    kernel: Optional[BaseKernel] = Field(None, description="Trained covariance (for correlation diagnostics)")
    sigma_n2: Optional[float] = Field(None, description="Noise variance of Gaussian models")
    params: Optional[ParamVector] = Field(None, description="Trained parameters to checkpoint")
    chain: Optional[ChainState] = Field(None, description="Retained samples of sampler runs")
    losses: List[float] = Field(default_factory=list, description="Loss curve of network-only training")
    predict_gaussian: Optional[Callable[[np.ndarray], PosteriorPredictive]] = Field(
        None, description="Observed-target predictive (regression)"
    )
    predict_probs: Optional[Callable[[np.ndarray], np.ndarray]] = Field(
        None, description="Class probabilities (classification)"
    )
    predict_mixture: Optional[Callable[[np.ndarray], MixturePredictive]] = Field(
        None, description="Per-sample Gaussian mixture of sampler runs (regression); scores test log likelihood"
    )

    model_config = ConfigDict(arbitrary_types_allowed=True)


class BaseRunner(ABC):
    """Trains one model family under an ``ExperimentConfig``."""

    kinds: Tuple[str, ...] = ()

    def __init__(self, config: Optional[ExperimentConfig] = None, **kwargs):
        if config is None:
            config = ExperimentConfig(model_kind=self.kinds[0])
        if kwargs:
            config = config.model_copy(update=kwargs)
        if config.model_kind not in self.kinds:
            raise ExperimentError(f"{type(self).__name__} cannot run model kind {config.model_kind!r}")
        self.config = config

    @abstractmethod
    def fit(self, train: Dataset, stream: RandomStream) -> FitOutcome:
        """Train on the normalized split."""

    def _se(self, dim: int) -> ArdSeParams:
        return ArdSeParams.default(
            dim,
            shared=self.config.shared_lengthscale,
            log_sigma_f2=self.config.init_log_sigma_f2,
            log_lengthscale=self.config.init_log_lengthscale,
        )

    def _noise(self) -> float:
        if self.config.init_log_sigma_n2 is not None:
            return self.config.init_log_sigma_n2
        return EXACT_NOISE_INIT.get(self.config.model_kind, DEEP_NOISE_INIT)

    def _batch_size(self, n: int) -> Optional[int]:
        if not self.config.minibatched:
            return None
        return min(self.config.batch_size or DEFAULT_BATCH_SIZE, n)

    def _feature_net(self, train: Dataset, stream: RandomStream) -> FeatureNetParams:
        """Fresh extractor, pretrained with a linear head when the net is frozen afterwards."""
        spec = self.config.net.model_copy(update={"input_dim": train.input_dim})
        net = init_params(spec, stream.split(10))
        if self.config.frozen_net:
            result = pretrain_feature_net(
                net,
                train.X,
                train.y,
                train.task,
                self._schedule(self.config.pretrain),
                stream.split(11),
                num_classes=train.num_classes or None,
                batch_size=self._batch_size(train.size),
            )
            net = result.net
        return net

    def _kernel(self, train: Dataset, stream: RandomStream):
        if not self.config.is_deep:
            return self._se(train.input_dim)
        net = self._feature_net(train, stream)
        return DeepKernel(base=self._se(net.output_dim), net=net)

    def _schedule(self, schedule: OptSchedule) -> OptSchedule:
        """``schedule`` with the configured weight decay on every network weight matrix."""
        if not self.config.weight_decay or not self.config.is_deep:
            return schedule
        num_layers = len(self.config.net.hidden_widths) + 1
        decay = {f"net.layer{i}.W": self.config.weight_decay for i in range(num_layers)}
        return schedule.model_copy(update={"weight_decay": {**decay, **schedule.weight_decay}})

    def _frozen(self) -> Tuple[str, ...]:
        return ("net.",) if self.config.frozen_net else ()

    def _sampler_frozen(self) -> Tuple[str, ...]:
        return tuple(dict.fromkeys(tuple(self.config.prior.frozen) + self._frozen()))


class ExactGpRunner(BaseRunner):
    """Type-II maximum likelihood for SE and deep-kernel exact GPs."""

    kinds = ("exact-se", "exact-dkl", "exact-fdkl")

    def build_model(self, train: Dataset, stream: RandomStream) -> GpModel:
        return GpModel(kernel=self._kernel(train, stream), log_sigma_n2=np.asarray(self._noise()))

    def fit(self, train: Dataset, stream: RandomStream) -> FitOutcome:
        X, y = train.X, train.y
        model = self.build_model(train, stream)
        schedule = self._schedule(self.config.schedule)
        fitted, trace = fit_full_batch(model, X, y, schedule, stream.split(2), frozen=self._frozen())
        return FitOutcome(
            trace=trace,
            objective=trace[-1].total,
            kernel=fitted.kernel,
            sigma_n2=fitted.sigma_n2,
            params=fitted.to_params(),
            predict_gaussian=lambda X_star: predict(fitted, X, y, X_star, with_noise=True),
        )


def _build_svgp(runner: BaseRunner, train: Dataset, stream: RandomStream) -> SvgpModel:
    kernel = runner._kernel(train, stream)
    features = ops.value_of(kernel.features(train.X))
    num_inducing = min(runner.config.num_inducing, train.size)
    Z = init_inducing_kmeans(features, num_inducing, stream.split(3), subset_size=runner.config.kmeans_subset)
    if train.task == "classification":
        likelihood = SoftmaxLikelihood(num_classes=train.num_classes, mc_samples=runner.config.mc_samples)
    else:
        likelihood = GaussianLikelihood(log_sigma_n2=np.asarray(runner._noise()))
    return SvgpModel.create(kernel, Z, likelihood)


def _elbo_terms(model: SvgpModel, train: Dataset, stream: RandomStream) -> ElboTerms:
    if model.is_gaussian:
        return elbo_gaussian(model, train.X, train.y, train.size)
    return elbo_softmax_mc(model, train.X, train.y, train.size, stream)


def _svgp_predictors(model: SvgpModel, stream: RandomStream) -> Dict[str, Any]:
    if model.is_gaussian:
        return {"predict_gaussian": lambda X_star: predict_observed(model, X_star)}
    return {"predict_probs": lambda X_star: predict_classes(model, X_star, stream)}


class SvgpRunner(BaseRunner):
    """Sparse variational GP with SE or deep kernel, full batch or minibatched."""

    kinds = ("svgp", "vdkl", "svdkl", "fsvdkl")

    def fit(self, train: Dataset, stream: RandomStream) -> FitOutcome:
        model = _build_svgp(self, train, stream)
        fitted, trace = fit_svgp(
            model,
            train.X,
            train.y,
            self._schedule(self.config.schedule),
            stream.split(4),
            batch_size=self._batch_size(train.size),
            freeze_net=self.config.frozen_net,
        )
        return FitOutcome(
            trace=trace,
            objective=trace[-1].elbo,
            kernel=fitted.kernel,
            sigma_n2=fitted.likelihood.sigma_n2 if fitted.is_gaussian else None,
            params=fitted.to_params(),
            **_svgp_predictors(fitted, stream.split(6)),
        )


class NnRunner(BaseRunner):
    """Plain network trained with MSE or cross-entropy."""

    kinds = ("nn",)

    def fit(self, train: Dataset, stream: RandomStream) -> FitOutcome:
        spec = self.config.net.model_copy(update={"input_dim": train.input_dim})
        baseline, losses = fit_nn_baseline(
            init_params(spec, stream.split(10)),
            train.X,
            train.y,
            train.task,
            self._schedule(self.config.schedule),
            stream.split(11),
            batch_size=self.config.batch_size,
            num_classes=train.num_classes or None,
        )
        if train.task == "classification":
            return FitOutcome(losses=losses, predict_probs=baseline.predict_probs)
        return FitOutcome(losses=losses, sigma_n2=baseline.sigma_n2, predict_gaussian=baseline.predict)


def _warm_start(config: ExperimentConfig, default: int):
    steps = config.warm_start_steps if config.warm_start_steps is not None else default
    return config.schedule.model_copy(update={"steps": steps})


class HmcRunner(BaseRunner):
    """HMC over network weights and hyperparameters of an exact deep-kernel GP."""

    kinds = ("hmc-dkl",)

    def fit(self, train: Dataset, stream: RandomStream) -> FitOutcome:
        X, y = train.X, train.y
        model = GpModel(kernel=self._kernel(train, stream), log_sigma_n2=np.asarray(self._noise()))
        warm = self._schedule(_warm_start(self.config, 0))
        if warm.steps:
            model, _ = fit_full_batch(model, X, y, warm, stream.split(2), frozen=self._frozen())

        spec = self.config.prior.model_copy(update={"kind": "exact_lml", "frozen": self._sampler_frozen()})
        potential = make_exact_dkl_potential(model, X, y, spec)
        chain = hmc_run(potential, model.to_params(), self.config.hmc, stream.split(7))
        if not chain.samples:
            raise SamplerError("HMC retained no samples")

        trace = []
        for i, theta in enumerate(chain.samples):
            sample = model.from_params(theta)
            terms = log_marginal_decomposed(sample, X, y)
            trace.append(
                TraceRecord(
                    step=i,
                    total=terms.total,
                    data_fit=terms.data_fit,
                    complexity=terms.complexity,
                    sigma_f2=sample.sigma_f2,
                    sigma_n2=sample.sigma_n2,
                )
            )
        last = model.from_params(chain.samples[-1])

        def mixture(X_star: np.ndarray) -> MixturePredictive:
            return predictive_average(chain, model, X_star, X, y)

        return FitOutcome(
            trace=trace,
            objective=float(np.mean([t.total for t in trace])),
            kernel=last.kernel,
            sigma_n2=last.sigma_n2,
            params=chain.samples[-1],
            chain=chain,
            predict_gaussian=lambda X_star: mixture(X_star).as_gaussian(),
            predict_mixture=mixture,
        )


class SgldRunner(BaseRunner):
    """SGLD over network weights and hyperparameters of a minibatched SVDKL model."""

    kinds = ("sgld-svdkl",)

    def fit(self, train: Dataset, stream: RandomStream) -> FitOutcome:
        model = _build_svgp(self, train, stream)
        batch = self._batch_size(train.size)
        warm = self._schedule(_warm_start(self.config, self.config.schedule.steps))
        if warm.steps:
            model, _ = fit_svgp(
                model, train.X, train.y, warm, stream.split(4), batch_size=batch, freeze_net=self.config.frozen_net
            )

        spec = self.config.prior.model_copy(update={"kind": "minibatch_objective", "frozen": self._sampler_frozen()})
        potential = make_svgp_potential(model, train.X, train.y, spec, stream.split(8))
        sgld = self.config.sgld.model_copy(update={"batch_size": batch})
        chain = sgld_run(potential, model.to_params(), sgld, stream.split(9))
        if not chain.samples:
            raise SamplerError("SGLD retained no samples")

        trace = []
        elbo_stream = stream.split(5)
        for i, theta in enumerate(chain.samples):
            sample = model.from_params(theta)
            terms = _elbo_terms(sample, train, elbo_stream.split(i))
            trace.append(
                TraceRecord(
                    step=i,
                    total=terms.elbo,
                    data_fit=terms.expected_ll,
                    complexity=-terms.kl,
                    sigma_f2=sample.kernel.signal_variance,
                    sigma_n2=sample.likelihood.sigma_n2 if sample.is_gaussian else None,
                    elbo=terms.elbo,
                    expected_ll=terms.expected_ll,
                    kl=terms.kl,
                )
            )
        last = model.from_params(chain.samples[-1])
        predict_stream = stream.split(6)
        outcome = FitOutcome(
            trace=trace,
            objective=float(np.mean([t.total for t in trace])),
            kernel=last.kernel,
            sigma_n2=last.likelihood.sigma_n2 if last.is_gaussian else None,
            params=chain.samples[-1],
            chain=chain,
        )
        if model.is_gaussian:
            outcome.predict_mixture = lambda X_star: predictive_average(chain, model, X_star)
            outcome.predict_gaussian = lambda X_star: outcome.predict_mixture(X_star).as_gaussian()
        else:
            outcome.predict_probs = lambda X_star: predictive_average(
                chain, model, X_star, stream=predict_stream
            ).probs
        return outcome

