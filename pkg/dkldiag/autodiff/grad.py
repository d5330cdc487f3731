"""
Gradients of scalar functions of a :class:`ParamVector`, and a finite-difference checker.

A differentiable function takes a mapping ``{block name: array-like}`` and returns a
scalar. Under :func:`gradient` the mapping holds tape nodes; under :func:`evaluate` it
holds plain arrays.
"""

import logging
from typing import Any, Callable, Dict, Mapping, Tuple

import numpy as np

from . import ops
from .params import ParamVector
from .tape import Node, NonScalarOutputError, Tape

logger = logging.getLogger(__name__)

__all__ = [
    "Objective",
    "gradient",
    "gradient_with_aux",
    "evaluate",
    "check_gradient",
]

Objective = Callable[[Mapping[str, Any]], Any]


def _scalar(value: Any) -> float:
    arr = ops.value_of(value)
    if arr.size != 1:
        raise NonScalarOutputError(f"Objective returned shape {arr.shape}, expected a scalar")
    return float(arr.reshape(()))


def evaluate(f: Objective, theta: ParamVector) -> float:
    """Forward evaluation without recording."""
    return _scalar(f(theta.as_dict()))


def gradient(f: Objective, theta: ParamVector) -> Tuple[float, ParamVector]:
    """
    Value and reverse-mode gradient of ``f`` at ``theta``.

    Returns:
        (value, grad): grad has the layout of ``theta``

    Raises:
        NonScalarOutputError: If ``f`` does not return a scalar
        UnregisteredPrimitiveError: If ``f`` applies an operation without an adjoint
    """
    tape = Tape()
    leaf = tape.variable(theta.values)
    view: Dict[str, Node] = {
        b.name: ops.reshape(ops.getitem(leaf, b.slice), b.shape) for b in theta.blocks
    }
    out = f(view)
    value = _scalar(out)

    if not isinstance(out, Node):
        return value, theta.with_values(np.zeros(len(theta)))

    adjoints = tape.backward(out)
    grad = adjoints[leaf.index]
    if grad is None:
        grad = np.zeros(len(theta))
    logger.debug(f"Gradient evaluated over {len(tape)} tape nodes")
    return value, theta.with_values(grad)


def check_gradient(f: Objective, theta: ParamVector, h: float = 1e-5) -> float:
    """
    Maximum componentwise relative error between reverse-mode and central differences.

    The relative error of each component uses ``max(|analytic|, |numeric|, 1e-8)`` as
    denominator.
    """
    if h <= 0:
        raise ValueError(f"Step size must be positive, got {h}")
    _, analytic = gradient(f, theta)
    base = theta.values
    worst = 0.0
    for i in range(len(theta)):
        up = base.copy()
        down = base.copy()
        up[i] += h
        down[i] -= h
        numeric = (evaluate(f, theta.with_values(up)) - evaluate(f, theta.with_values(down))) / (2.0 * h)
        a = float(analytic.values[i])
        denom = max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, abs(a - numeric) / denom)
    return worst


def gradient_with_aux(f: Callable[[Mapping[str, Any]], Tuple[Any, Mapping[str, Any]]], theta: ParamVector):
    """
    Like :func:`gradient` for functions returning ``(scalar, aux)``.

    Returns:
        (value, grad, aux) with every aux entry converted to a plain float
    """
    captured: Dict[str, float] = {}

    def _primary(view):
        out, aux = f(view)
        captured.update({k: _scalar(v) for k, v in aux.items()})
        return out

    value, grad = gradient(_primary, theta)
    return value, grad, captured
