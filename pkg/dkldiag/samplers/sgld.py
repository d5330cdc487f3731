"""
Stochastic gradient Langevin dynamics.

Update per minibatch: ``theta <- theta - (eta/2) grad U_batch(theta) + sqrt(eta) xi`` with
``xi ~ N(0, I)`` and ``eta = lr0 / (1 + decay * epoch)``. No preconditioning.
"""

import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..autodiff import ParamVector
from ..core.random import RandomStream, minibatch_indices
from .chain import ChainState, SamplerError
from .potential import Potential

logger = logging.getLogger(__name__)

__all__ = [
    "SgldConfig",
    "sgld_run",
]


class SgldConfig(BaseModel):
    """Learning-rate schedule, epochs and minibatching of an SGLD run."""

    lr0: float = Field(default=1e-4, gt=0, description="Initial learning rate eta_0")
    decay: float = Field(default=0.4, ge=0, description="eta_e = lr0 / (1 + decay * e)")
    burn_in_epochs: int = Field(default=100, ge=0, description="Epochs before samples are kept")
    sample_epochs: int = Field(default=200, ge=1, description="Epochs after burn-in")
    sample_every: int = Field(default=2, ge=1, description="Keep one sample every this many epochs")
    batch_size: Optional[int] = Field(default=None, ge=1, description="Minibatch size (full data when omitted)")
    steps_per_epoch: int = Field(
        default=1, ge=1, description="Updates per epoch for potentials without data rows"
    )
    noise_scale: float = Field(default=1.0, ge=0, description="Multiplier on the injected noise (0 gives SGD)")

    model_config = ConfigDict(extra="forbid")

    def lr_at(self, epoch: int) -> float:
        return self.lr0 / (1.0 + self.decay * epoch)


def _proposal(potential: Potential, theta: ParamVector, batch, eta: float, noise: np.ndarray, free: np.ndarray):
    value, grad = potential.value_and_grad(theta, batch)
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        return None
    step = -0.5 * eta * grad + np.sqrt(eta) * noise
    step = np.where(free, step, 0.0)
    new = theta.values + step
    if not np.all(np.isfinite(new)):
        return None
    return theta.with_values(new)


def sgld_run(potential: Potential, theta0: ParamVector, config: SgldConfig, stream: RandomStream) -> ChainState:
    """
    Run SGLD and keep one sample every ``sample_every`` epochs after burn-in.

    Minibatches come from the potential's ``num_data`` rows, one fresh permutation per
    epoch. A non-finite update is retried once at half the learning rate with the same
    batch and noise.

    Raises:
        SamplerError: If an update stays non-finite after the retry
    """
    n = potential.num_data
    if n is not None:
        batch = n if config.batch_size is None else min(config.batch_size, n)
        per_epoch = -(-n // batch)
    else:
        batch = None
        per_epoch = config.steps_per_epoch

    theta = theta0
    free = potential.free_mask(theta)
    chain = ChainState(position=theta, step_size=config.lr0)
    batch_stream = stream.split(0)
    noise_stream = stream.split(1)
    epochs = config.burn_in_epochs + config.sample_epochs
    logger.info(
        f"SGLD: lr0={config.lr0}, decay={config.decay}, epochs={epochs}, "
        f"batches/epoch={per_epoch}, batch={batch or 'full'}"
    )

    step = 0
    for epoch in range(epochs):
        eta = config.lr_at(epoch)
        for _ in range(per_epoch):
            idx = minibatch_indices(batch_stream, step, n, batch) if n is not None else None
            noise = config.noise_scale * noise_stream.normal(len(theta))
            proposal = _proposal(potential, theta, idx, eta, noise, free)
            if proposal is None:
                logger.warning(f"Non-finite SGLD update at epoch {epoch}, step {step}; retrying at eta/2")
                proposal = _proposal(potential, theta, idx, 0.5 * eta, noise, free)
                if proposal is None:
                    raise SamplerError(f"Non-finite SGLD update at epoch {epoch}, step {step}")
            theta = proposal
            step += 1

        if epoch >= config.burn_in_epochs and (epoch - config.burn_in_epochs) % config.sample_every == 0:
            chain.samples.append(theta)
            chain.sample_energies.append(float(potential.value(theta, idx)))
        logger.debug(f"SGLD epoch {epoch}: eta={eta:.3e}")

    chain.position = theta
    logger.info(f"SGLD finished: {len(chain.samples)} samples after {step} updates")
    return chain
