"""
Reverse-mode automatic differentiation over dense-matrix primitives, Adam, and gradient checking.
"""

from . import ops
from .adam import AdamState, OptimizerError, OptSchedule, adam_step, run_adam
from .grad import check_gradient, evaluate, gradient, gradient_with_aux
from .params import ParamBlock, ParamVector
from .tape import Node, NonScalarOutputError, Tape, UnregisteredPrimitiveError

__all__ = [
    "ops",
    # tape
    "Node",
    "Tape",
    "NonScalarOutputError",
    "UnregisteredPrimitiveError",
    # parameters
    "ParamBlock",
    "ParamVector",
    # gradients
    "gradient",
    "gradient_with_aux",
    "evaluate",
    "check_gradient",
    # optimizer
    "AdamState",
    "OptSchedule",
    "OptimizerError",
    "adam_step",
    "run_adam",
]
