"""
Potential energies ``U(theta) = -log p(data | theta) - log p(theta)`` for the samplers.

The likelihood part is either the exact negative LML of a (deep kernel) GP, or the
negative ELBO of an SVGP scaled to the full data set from a minibatch. The prior is an
isotropic Gaussian per block: variance 1 on network weights, a wide variance on
log-hyperparameters.
"""

import logging
from abc import ABC, abstractmethod
from typing import Any, Callable, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..autodiff import ParamVector, gradient, ops
from ..core.linalg import CholeskyError
from ..core.random import RandomStream
from ..models.exact_gp import GpModel, lml_terms
from ..models.svgp import SvgpModel, gaussian_elbo_terms, softmax_elbo_terms
from .chain import SamplerError

logger = logging.getLogger(__name__)

__all__ = [
    "PotentialSpec",
    "Potential",
    "FunctionPotential",
    "ObjectivePotential",
    "prior_energy",
    "make_exact_dkl_potential",
    "make_svgp_potential",
]


class PotentialSpec(BaseModel):
    """Objective kind and Gaussian prior of a sampled posterior."""

    kind: str = Field(
        default="exact_lml",
        pattern="^(exact_lml|minibatch_objective)$",
        description="Negative exact LML (HMC) or negative minibatch-scaled training objective (SGLD)",
    )
    weight_prior_variance: float = Field(default=1.0, gt=0, description="Prior variance of network weights")
    hyper_prior_variance: float = Field(default=10.0, gt=0, description="Prior variance of log-hyperparameters")
    weight_prefixes: Tuple[str, ...] = Field(default=("net.",), description="Blocks treated as network weights")
    frozen: Tuple[str, ...] = Field(default=(), description="Blocks held fixed while sampling (no prior applied)")

    model_config = ConfigDict(extra="forbid")


def prior_energy(view: Mapping[str, Any], spec: PotentialSpec) -> Any:
    """``sum_b |theta_b|^2 / (2 v_b)`` over every sampled block."""
    total = 0.0
    for name, value in view.items():
        if spec.frozen and name.startswith(spec.frozen):
            continue
        variance = spec.weight_prior_variance if name.startswith(spec.weight_prefixes) else spec.hyper_prior_variance
        total = ops.add(total, ops.multiply(0.5 / variance, ops.sum(ops.square(value))))
    return total


class Potential(ABC):
    """
    Energy ``U`` and its gradient on a parameter vector.

    ``num_data`` is set when the potential accepts minibatches of row indices; blocks whose
    names start with a prefix in ``frozen`` are not moved by the samplers.
    """

    num_data: Optional[int] = None
    frozen: Tuple[str, ...] = ()

    @abstractmethod
    def value_and_grad(self, theta: ParamVector, batch: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
        """Energy and flat gradient at ``theta`` (on ``batch`` when given)."""

    def value(self, theta: ParamVector, batch: Optional[np.ndarray] = None) -> float:
        return self.value_and_grad(theta, batch)[0]

    def free_mask(self, theta: ParamVector) -> np.ndarray:
        """Entries the samplers may move."""
        return ~theta.mask(self.frozen)


class FunctionPotential(Potential):
    """Potential from plain callables on the flat vector, for analytic targets."""

    def __init__(
        self,
        energy: Callable[[np.ndarray], float],
        grad: Callable[[np.ndarray], np.ndarray],
        frozen: Tuple[str, ...] = (),
    ):
        self._energy = energy
        self._grad = grad
        self.frozen = tuple(frozen)

    def value_and_grad(self, theta: ParamVector, batch: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
        x = theta.values
        return float(self._energy(x)), np.asarray(self._grad(x), dtype=np.float64)

    def value(self, theta: ParamVector, batch: Optional[np.ndarray] = None) -> float:
        return float(self._energy(theta.values))


class ObjectivePotential(Potential):
    """
    Potential from a differentiable objective plus the Gaussian prior.

    ``objective(view, batch)`` returns the negative log-likelihood part; gradients come from
    the tape.
    """

    def __init__(
        self,
        objective: Callable[[Mapping[str, Any], Optional[np.ndarray]], Any],
        spec: PotentialSpec,
        num_data: Optional[int] = None,
    ):
        self._objective = objective
        self.spec = spec
        self.num_data = num_data
        self.frozen = tuple(spec.frozen)

    def _energy(self, batch: Optional[np.ndarray]):
        def fn(view):
            return ops.add(self._objective(view, batch), prior_energy(view, self.spec))

        return fn

    def value_and_grad(self, theta: ParamVector, batch: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
        try:
            value, grad = gradient(self._energy(batch), theta)
        except CholeskyError as e:
            logger.warning(f"Potential evaluation failed: {e}")
            return float("inf"), np.full(len(theta), np.nan)
        grad_values = grad.values.copy()
        grad_values[theta.mask(self.frozen)] = 0.0
        return value, grad_values


def make_exact_dkl_potential(model: GpModel, X: np.ndarray, y: np.ndarray, spec: Optional[PotentialSpec] = None):
    """
    ``U = -log p(y | theta) - log p(theta)`` with the exact marginal likelihood.

    The returned potential ignores minibatches; pair it with HMC.
    """
    spec = spec or PotentialSpec()
    if spec.kind != "exact_lml":
        raise SamplerError(f"Exact DKL potentials use kind 'exact_lml', got {spec.kind!r}")
    X = np.asarray(X, dtype=np.float64)
    X = X[:, None] if X.ndim == 1 else X
    y = np.asarray(y, dtype=np.float64).reshape(-1)

    def objective(view, batch):
        total, _, _, _ = lml_terms(model.bind(view), X, y)
        return ops.negative(total)

    return ObjectivePotential(objective, spec)


def make_svgp_potential(
    model: SvgpModel,
    X: np.ndarray,
    y: np.ndarray,
    spec: Optional[PotentialSpec] = None,
    stream: Optional[RandomStream] = None,
):
    """
    Negative SVGP objective scaled from a minibatch to the full data set, plus the prior.

    Variational parameters and inducing inputs are held fixed, so the KL term is a constant
    offset and the sampled blocks are the kernel, network and noise parameters.
    """
    spec = spec or PotentialSpec(kind="minibatch_objective")
    frozen = tuple(dict.fromkeys(tuple(spec.frozen) + ("variational.",)))
    spec = spec.model_copy(update={"frozen": frozen})
    X = np.asarray(X, dtype=np.float64)
    X = X[:, None] if X.ndim == 1 else X
    y = np.asarray(y).reshape(-1)
    n = X.shape[0]
    stream = stream or RandomStream(0)
    calls = [0]
    if model.is_gaussian:
        y = y.astype(np.float64)
    else:
        y = y.astype(np.int64)

    def objective(view, batch):
        idx = np.arange(n) if batch is None else batch
        bound = model.bind(view)
        if model.is_gaussian:
            elbo, _, _ = gaussian_elbo_terms(bound, X[idx], y[idx], n)
        else:
            calls[0] += 1
            elbo, _, _ = softmax_elbo_terms(bound, X[idx], y[idx], n, stream.split(calls[0]))
        return ops.negative(elbo)

    return ObjectivePotential(objective, spec, num_data=n)
