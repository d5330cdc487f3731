"""
Reverse-mode tape.

A :class:`Tape` records every primitive applied to its :class:`Node` values, in
evaluation order, together with a vector-Jacobian product closure. ``backward`` walks
the records in reverse and accumulates adjoints. Primitives live in :mod:`.ops`; numpy
ufuncs applied to nodes are routed there, anything else raises
:class:`UnregisteredPrimitiveError`.
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "Node",
    "Tape",
    "NonScalarOutputError",
    "UnregisteredPrimitiveError",
]

VjpFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class UnregisteredPrimitiveError(Exception):
    """Raised when a tape node flows through an operation without a registered adjoint."""


class NonScalarOutputError(Exception):
    """Raised when ``backward`` is asked to differentiate a non-scalar node."""


class Node:
    """A value recorded on a tape."""

    __slots__ = ("tape", "index", "value")

    # numpy defers binary operators to us instead of building object arrays
    __array_priority__ = 1000.0

    def __init__(self, tape: "Tape", index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    def __repr__(self) -> str:
        return f"Node(index={self.index}, shape={self.shape})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def __len__(self) -> int:
        return len(self.value)

    @property
    def T(self) -> "Node":
        from . import ops

        return ops.transpose(self)

    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops

        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops

        return ops.subtract(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.subtract(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.multiply(self, other)

    def __rmul__(self, other):
        from . import ops

        return ops.multiply(other, self)

    def __truediv__(self, other):
        from . import ops

        return ops.divide(self, other)

    def __rtruediv__(self, other):
        from . import ops

        return ops.divide(other, self)

    def __neg__(self):
        from . import ops

        return ops.negative(self)

    def __pow__(self, exponent):
        from . import ops

        return ops.power(self, exponent)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops

        return ops.matmul(other, self)

    def __getitem__(self, key):
        from . import ops

        return ops.getitem(self, key)

    def __float__(self) -> float:
        return float(self.value)

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        from . import ops

        handler = ops.UFUNC_PRIMITIVES.get(ufunc) if method == "__call__" and not kwargs else None
        if handler is None:
            raise UnregisteredPrimitiveError(f"No adjoint registered for numpy.{ufunc.__name__} ({method})")
        return handler(*inputs)

    def __array_function__(self, func, types, args, kwargs):
        from . import ops

        handler = ops.FUNCTION_PRIMITIVES.get(func)
        if handler is None:
            raise UnregisteredPrimitiveError(f"No adjoint registered for numpy.{func.__name__}")
        return handler(*args, **kwargs)

    def __array__(self, dtype=None, copy=None):
        raise UnregisteredPrimitiveError(
            "Tape nodes cannot be converted to plain arrays inside a differentiated function"
        )


class Tape:
    """Ordered record of primitive applications for one evaluation."""

    def __init__(self):
        self._nodes: List[Node] = []
        self._parents: List[Tuple[int, ...]] = []
        self._vjps: List[Optional[VjpFn]] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def variable(self, value) -> Node:
        """Register a leaf input."""
        return self._append(np.asarray(value, dtype=np.float64), (), None)

    def record(self, value: np.ndarray, parents: Sequence[Node], vjp: VjpFn) -> Node:
        """Register the output of a primitive applied to ``parents``."""
        return self._append(np.asarray(value, dtype=np.float64), tuple(p.index for p in parents), vjp)

    def _append(self, value: np.ndarray, parents: Tuple[int, ...], vjp: Optional[VjpFn]) -> Node:
        node = Node(self, len(self._nodes), value)
        self._nodes.append(node)
        self._parents.append(parents)
        self._vjps.append(vjp)
        return node

    def backward(self, output: Node) -> List[Optional[np.ndarray]]:
        """
        Accumulate adjoints of the scalar ``output`` with respect to every node.

        Returns:
            List of adjoint arrays indexed by node id (``None`` where the node does not
            influence the output)

        Raises:
            NonScalarOutputError: If ``output`` is not a scalar
        """
        if output.tape is not self:
            raise ValueError("Output node belongs to a different tape")
        if output.value.size != 1:
            raise NonScalarOutputError(f"Cannot differentiate output of shape {output.shape}")

        adjoints: List[Optional[np.ndarray]] = [None] * len(self._nodes)
        adjoints[output.index] = np.ones_like(output.value)

        for index in range(output.index, -1, -1):
            g = adjoints[index]
            vjp = self._vjps[index]
            if g is None or vjp is None:
                continue
            parent_grads = vjp(g)
            for parent, pg in zip(self._parents[index], parent_grads):
                if pg is None:
                    continue
                if adjoints[parent] is None:
                    adjoints[parent] = np.array(pg, dtype=np.float64, copy=True)
                else:
                    adjoints[parent] = adjoints[parent] + pg
        return adjoints
