"""
Hamiltonian Monte Carlo with a leapfrog integrator and unit mass matrix.
"""

import logging
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..autodiff import ParamVector
from ..core.random import RandomStream
from .chain import ChainState, SamplerError
from .potential import Potential

logger = logging.getLogger(__name__)

__all__ = [
    "HmcConfig",
    "leapfrog",
    "hmc_run",
]


class HmcConfig(BaseModel):
    """Step size, trajectory length and chain schedule."""

    step_size: float = Field(default=0.005, gt=0, description="Leapfrog step size epsilon")
    leapfrog_steps: int = Field(default=20, ge=0, description="Leapfrog steps L per proposal (0 proposes no move)")
    burn_in: int = Field(default=10000, ge=0, description="Iterations discarded before sampling")
    samples: int = Field(default=1000, ge=1, description="Sampling iterations after burn-in")
    thin: int = Field(default=10, ge=1, description="Keep every thin-th sampling iteration")
    max_consecutive_failures: int = Field(
        default=100, ge=1, description="Abort after this many non-finite proposals in a row"
    )

    model_config = ConfigDict(extra="forbid")


def _masked_grad(potential: Potential, theta: ParamVector, free: np.ndarray) -> Tuple[float, np.ndarray]:
    value, grad = potential.value_and_grad(theta)
    grad = np.where(free, grad, 0.0)
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise SamplerError(f"Non-finite potential or gradient (U={value})")
    return value, grad


def leapfrog(
    potential: Potential, theta: ParamVector, p: np.ndarray, step_size: float, steps: int
) -> Tuple[ParamVector, np.ndarray]:
    """
    ``steps`` leapfrog steps: half momentum step, alternating full steps, half momentum step.

    Frozen blocks of the potential neither move nor carry momentum.

    Raises:
        SamplerError: On invalid settings or a non-finite gradient along the trajectory
    """
    if step_size <= 0:
        raise SamplerError(f"Step size must be positive, got {step_size}")
    if steps < 1:
        raise SamplerError(f"Need at least one leapfrog step, got {steps}")
    free = potential.free_mask(theta)
    x = theta.values.copy()
    p = np.where(free, np.asarray(p, dtype=np.float64), 0.0)

    _, grad = _masked_grad(potential, theta, free)
    p = p - 0.5 * step_size * grad
    for i in range(steps):
        x = x + step_size * p
        _, grad = _masked_grad(potential, theta.with_values(x), free)
        if i != steps - 1:
            p = p - step_size * grad
    p = p - 0.5 * step_size * grad
    return theta.with_values(x), p


def _hamiltonian(energy: float, p: np.ndarray) -> float:
    return energy + 0.5 * float(p @ p)


def hmc_run(
    potential: Potential,
    theta0: ParamVector,
    config: HmcConfig,
    stream: RandomStream,
    initial: Optional[ChainState] = None,
) -> ChainState:
    """
    Run a Metropolis-corrected HMC chain.

    Each iteration draws ``p ~ N(0, I)`` on the free entries, integrates, and accepts with
    probability ``min(1, exp(H(theta, p) - H(theta', p')))``. Proposals with a non-finite
    energy anywhere along the trajectory are rejected.

    Args:
        potential: Energy to sample from
        theta0: Starting point (ignored when ``initial`` is given)
        config: Step size, trajectory length, burn-in, sample count and thinning
        stream: Source of momenta and acceptance draws
        initial: Continue from a previous chain state

    Raises:
        SamplerError: If the starting energy is not finite or too many proposals in a row fail
    """
    theta = initial.position if initial is not None else theta0
    free = potential.free_mask(theta)
    energy = potential.value(theta)
    if not np.isfinite(energy):
        raise SamplerError(f"Starting point has non-finite energy {energy}")

    chain = initial or ChainState(position=theta, step_size=config.step_size, leapfrog_steps=config.leapfrog_steps)
    momentum_stream = stream.split(0)
    accept_stream = stream.split(1)
    total = config.burn_in + config.samples
    failures = 0
    logger.info(
        f"HMC: eps={config.step_size}, L={config.leapfrog_steps}, burn_in={config.burn_in}, "
        f"samples={config.samples}, thin={config.thin}"
    )

    for it in range(total):
        p0 = np.where(free, momentum_stream.normal(len(theta)), 0.0)
        h0 = _hamiltonian(energy, p0)
        u = accept_stream.uniform()

        if config.leapfrog_steps == 0:
            proposal, p1, new_energy = theta, p0, energy
        else:
            try:
                proposal, p1 = leapfrog(potential, theta, p0, config.step_size, config.leapfrog_steps)
                new_energy = potential.value(proposal)
            except SamplerError as e:
                proposal, new_energy = None, float("inf")
                logger.debug(f"Iteration {it}: {e}")

        chain.proposals += 1
        if proposal is None or not np.isfinite(new_energy):
            failures += 1
            chain.rejected_nonfinite += 1
            logger.warning(f"Rejected non-finite HMC proposal at iteration {it}")
            if failures >= config.max_consecutive_failures:
                raise SamplerError(f"{failures} consecutive non-finite proposals; last at iteration {it}")
        else:
            failures = 0
            h1 = _hamiltonian(new_energy, p1)
            alpha = float(np.exp(min(0.0, h0 - h1)))
            chain.accept_prob_sum += alpha
            if u < alpha:
                chain.accepted += 1
                theta, energy = proposal, new_energy
            chain.momentum = p1

        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            chain.samples.append(theta)
            chain.sample_energies.append(energy)
        if (it + 1) % 1000 == 0:
            logger.info(f"HMC iteration {it + 1}/{total}: acceptance {chain.acceptance_rate:.3f}")

    chain.position = theta
    logger.info(
        f"HMC finished: {len(chain.samples)} samples, acceptance {chain.acceptance_rate:.3f}, "
        f"mean accept prob {chain.mean_accept_prob:.3f}"
    )
    return chain
