"""
Adam with bias correction, per-block weight decay and freezing, plus a step-decay schedule.
"""

import logging
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .grad import gradient_with_aux
from .params import ParamVector

logger = logging.getLogger(__name__)

__all__ = [
    "AdamState",
    "OptSchedule",
    "OptimizerError",
    "adam_step",
    "run_adam",
]


class OptimizerError(Exception):
    """Raised on dimension mismatches or non-finite objectives during optimization."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


class AdamState(BaseModel):
    """Moment estimates and constants of one Adam run."""

    t: int = Field(default=0, ge=0, description="Number of updates applied")
    m: Optional[np.ndarray] = Field(default=None, description="First-moment estimate")
    v: Optional[np.ndarray] = Field(default=None, description="Second-moment estimate")
    lr: float = Field(default=1e-3, gt=0, description="Learning rate")
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    weight_decay: Dict[str, float] = Field(
        default_factory=dict, description="Block-name prefix -> coefficient of the additive lambda*theta term"
    )
    frozen: Tuple[str, ...] = Field(default=(), description="Block-name prefixes that are never updated")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @classmethod
    def for_params(cls, theta: ParamVector, **kwargs) -> "AdamState":
        return cls(m=np.zeros(len(theta)), v=np.zeros(len(theta)), **kwargs)


class OptSchedule(BaseModel):
    """Training schedule: step count, base learning rate and step decays."""

    steps: int = Field(default=1000, ge=0, description="Number of optimizer steps")
    lr: float = Field(default=1e-3, gt=0, description="Initial learning rate")
    decay_points: List[float] = Field(
        default_factory=lambda: [0.5, 0.75], description="Fractions of training at which the rate is multiplied"
    )
    decay_factor: float = Field(default=0.1, gt=0, le=1, description="Multiplier applied at each decay point")
    weight_decay: Dict[str, float] = Field(default_factory=dict, description="Prefix -> weight decay coefficient")
    trace_every: int = Field(default=1, ge=1, description="Record a trace entry every this many steps")

    model_config = ConfigDict(extra="forbid")

    @field_validator("decay_points")
    @classmethod
    def _check_points(cls, value: List[float]) -> List[float]:
        if any(p <= 0 or p >= 1 for p in value):
            raise ValueError("Decay points must be fractions in (0, 1)")
        return sorted(value)

    def lr_at(self, step: int) -> float:
        """Learning rate in effect for the 0-based ``step``."""
        passed = sum(1 for p in self.decay_points if step >= int(round(p * self.steps)))
        return self.lr * self.decay_factor**passed


def adam_step(state: AdamState, theta: ParamVector, grad: ParamVector) -> Tuple[AdamState, ParamVector]:
    """
    One bias-corrected Adam update minimizing the objective whose gradient is ``grad``.

    Weight decay adds ``lambda * theta`` to the gradient of the designated blocks before
    the moment update; frozen blocks keep their values and moments.

    Raises:
        OptimizerError: On dimension mismatch
    """
    n = len(theta)
    if len(grad) != n:
        raise OptimizerError(f"Gradient has {len(grad)} entries, parameters have {n}")
    m = state.m if state.m is not None else np.zeros(n)
    v = state.v if state.v is not None else np.zeros(n)
    if m.shape != (n,) or v.shape != (n,):
        raise OptimizerError(f"Adam moments have shape {m.shape}, parameters have {n}")

    g = grad.values.copy()
    for prefix, coeff in state.weight_decay.items():
        if coeff:
            mask = theta.mask([prefix])
            g[mask] += coeff * theta.values[mask]

    frozen = theta.mask(state.frozen)
    g[frozen] = 0.0

    t = state.t + 1
    m_new = state.beta1 * m + (1.0 - state.beta1) * g
    v_new = state.beta2 * v + (1.0 - state.beta2) * g * g
    m_hat = m_new / (1.0 - state.beta1**t)
    v_hat = v_new / (1.0 - state.beta2**t)
    update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    update[frozen] = 0.0
    m_new[frozen] = m[frozen]
    v_new[frozen] = v[frozen]

    new_state = state.model_copy(update={"t": t, "m": m_new, "v": v_new})
    return new_state, theta.with_values(theta.values - update)


StepCallback = Callable[[int, ParamVector, float, Mapping[str, float]], None]


def run_adam(
    loss: Optional[Callable[[Mapping[str, Any]], Tuple[Any, Mapping[str, Any]]]],
    theta: ParamVector,
    schedule: OptSchedule,
    frozen: Tuple[str, ...] = (),
    callback: Optional[StepCallback] = None,
    batch_loss: Optional[Callable[[int], Callable[[Mapping[str, Any]], Tuple[Any, Mapping[str, Any]]]]] = None,
) -> Tuple[ParamVector, AdamState]:
    """
    Minimize ``loss`` with Adam following ``schedule``.

    Args:
        loss: Function of the parameter view returning ``(scalar, aux)``
        theta: Initial parameters
        schedule: Steps, learning rates and weight decay
        frozen: Block-name prefixes excluded from updates
        callback: Called after the gradient of each step as ``(step, theta, value, aux)``
            with ``theta`` the parameters the value was computed at
        batch_loss: Optional factory returning the loss for a given step (minibatching);
            overrides ``loss`` when given

    Raises:
        OptimizerError: If the objective or its gradient becomes non-finite
    """
    state = AdamState.for_params(theta, lr=schedule.lr, weight_decay=dict(schedule.weight_decay), frozen=frozen)
    for step in range(schedule.steps):
        step_loss = batch_loss(step) if batch_loss is not None else loss
        value, grad, aux = gradient_with_aux(step_loss, theta)
        if callback is not None:
            callback(step, theta, value, aux)
        if not np.isfinite(value) or not np.all(np.isfinite(grad.values)):
            logger.error(f"Non-finite objective at step {step}: value={value}")
            raise OptimizerError(f"Non-finite objective at step {step}", step=step)
        lr = schedule.lr_at(step)
        if lr != state.lr:
            logger.info(f"Learning rate {state.lr:.3e} -> {lr:.3e} at step {step}")
            state = state.model_copy(update={"lr": lr})
        state, theta = adam_step(state, theta, grad)
    return theta, state
