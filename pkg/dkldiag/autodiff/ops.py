"""
Registered differentiable primitives.

Every function accepts plain arrays or tape nodes. With no node among its inputs a
primitive returns a plain ``numpy`` result, so model code runs unchanged with or without
a tape.
"""

import logging
from typing import Any, Callable, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.special

from ..core.linalg import DEFAULT_JITTER, cholesky_with_jitter
from .tape import Node, Tape

logger = logging.getLogger(__name__)

__all__ = [
    "add",
    "subtract",
    "multiply",
    "divide",
    "negative",
    "power",
    "square",
    "exp",
    "log",
    "sqrt",
    "relu",
    "clamp_min",
    "matmul",
    "sum",
    "mean",
    "transpose",
    "reshape",
    "getitem",
    "stack",
    "concatenate",
    "diag_embed",
    "diag_part",
    "tril",
    "log_softmax",
    "logsumexp",
    "cholesky",
    "solve_triangular",
    "solve_posdef",
    "logdet_from_cholesky",
    "value_of",
    "is_node",
]


def is_node(x: Any) -> bool:
    return isinstance(x, Node)


def value_of(x: Any) -> np.ndarray:
    """The plain value behind ``x`` (node or array-like)."""
    if isinstance(x, Node):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _tape_of(args: Sequence[Any]) -> Optional[Tape]:
    tape = None
    for a in args:
        if isinstance(a, Node):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ValueError("Cannot combine nodes from different tapes")
    return tape


def _apply(value: np.ndarray, args: Sequence[Any], grads: Sequence[Callable[[np.ndarray], np.ndarray]]):
    """Record ``value`` as the output of a primitive over ``args`` with per-argument adjoints."""
    tape = _tape_of(args)
    if tape is None:
        return value
    parents = [a for a in args if isinstance(a, Node)]
    fns = [fn for a, fn in zip(args, grads) if isinstance(a, Node)]
    return tape.record(value, parents, lambda g: [fn(g) for fn in fns])


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# elementwise


def add(a, b):
    va, vb = value_of(a), value_of(b)
    return _apply(va + vb, (a, b), (lambda g: _unbroadcast(g, va.shape), lambda g: _unbroadcast(g, vb.shape)))


def subtract(a, b):
    va, vb = value_of(a), value_of(b)
    return _apply(va - vb, (a, b), (lambda g: _unbroadcast(g, va.shape), lambda g: _unbroadcast(-g, vb.shape)))


def multiply(a, b):
    va, vb = value_of(a), value_of(b)
    return _apply(
        va * vb,
        (a, b),
        (lambda g: _unbroadcast(g * vb, va.shape), lambda g: _unbroadcast(g * va, vb.shape)),
    )


def divide(a, b):
    va, vb = value_of(a), value_of(b)
    return _apply(
        va / vb,
        (a, b),
        (lambda g: _unbroadcast(g / vb, va.shape), lambda g: _unbroadcast(-g * va / (vb * vb), vb.shape)),
    )


def negative(x):
    return _apply(-value_of(x), (x,), (lambda g: -g,))


def power(x, exponent: float):
    if isinstance(exponent, Node):
        raise NotImplementedError("Only constant exponents are supported")
    vx = value_of(x)
    p = float(exponent)
    return _apply(vx**p, (x,), (lambda g: g * p * vx ** (p - 1.0),))


def square(x):
    vx = value_of(x)
    return _apply(vx * vx, (x,), (lambda g: 2.0 * g * vx,))


def exp(x):
    out = np.exp(value_of(x))
    return _apply(out, (x,), (lambda g: g * out,))


def log(x):
    vx = value_of(x)
    return _apply(np.log(vx), (x,), (lambda g: g / vx,))


def sqrt(x):
    out = np.sqrt(value_of(x))
    return _apply(out, (x,), (lambda g: 0.5 * g / out,))


def relu(x):
    """``max(x, 0)``; the derivative at exactly 0 is 0."""
    vx = value_of(x)
    mask = vx > 0
    return _apply(np.where(mask, vx, 0.0), (x,), (lambda g: g * mask,))


def clamp_min(x, lower: float):
    vx = value_of(x)
    mask = vx > lower
    return _apply(np.where(mask, vx, lower), (x,), (lambda g: g * mask,))


# linear algebra


def matmul(a, b):
    va, vb = value_of(a), value_of(b)
    out = va @ vb

    def _promote():
        a2 = va if va.ndim > 1 else va[None, :]
        b2 = vb if vb.ndim > 1 else vb[:, None]
        return a2, b2

    def grad_a(g):
        a2, b2 = _promote()
        g2 = np.reshape(g, (a2.shape[0], b2.shape[1]))
        return (g2 @ b2.T).reshape(va.shape)

    def grad_b(g):
        a2, b2 = _promote()
        g2 = np.reshape(g, (a2.shape[0], b2.shape[1]))
        return (a2.T @ g2).reshape(vb.shape)

    return _apply(out, (a, b), (grad_a, grad_b))


def transpose(x):
    return _apply(value_of(x).T, (x,), (lambda g: g.T,))


def reshape(x, shape):
    vx = value_of(x)
    return _apply(vx.reshape(shape), (x,), (lambda g: g.reshape(vx.shape),))


def getitem(x, key):
    vx = value_of(x)

    def grad(g):
        out = np.zeros_like(vx)
        np.add.at(out, key, g)
        return out

    return _apply(vx[key], (x,), (grad,))


def stack(items: Sequence[Any], axis: int = 0):
    values = [value_of(i) for i in items]
    out = np.stack(values, axis=axis)
    grads = [(lambda k: (lambda g: np.take(g, k, axis=axis)))(k) for k in range(len(items))]
    return _apply(out, tuple(items), tuple(grads))


def concatenate(items: Sequence[Any], axis: int = 0):
    values = [value_of(i) for i in items]
    out = np.concatenate(values, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in values])

    def make(k):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(bounds[k], bounds[k + 1])
        return lambda g: g[tuple(sl)]

    return _apply(out, tuple(items), tuple(make(k) for k in range(len(items))))


def diag_embed(v):
    """Vector to diagonal matrix."""
    return _apply(np.diag(value_of(v)), (v,), (lambda g: np.diag(g).copy(),))


def diag_part(m):
    """Diagonal of a square matrix."""
    vm = value_of(m)
    return _apply(np.diag(vm).copy(), (m,), (lambda g: np.diag(g),))


def tril(x, k: int = 0):
    return _apply(np.tril(value_of(x), k), (x,), (lambda g: np.tril(g, k),))


# reductions


def sum(x, axis=None, keepdims: bool = False):
    vx = value_of(x)
    out = np.sum(vx, axis=axis, keepdims=keepdims)

    def grad(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, vx.shape).copy()

    return _apply(np.asarray(out), (x,), (grad,))


def mean(x, axis=None, keepdims: bool = False):
    vx = value_of(x)
    count = vx.size if axis is None else np.prod([vx.shape[a] for a in np.atleast_1d(axis)])
    return divide(sum(x, axis=axis, keepdims=keepdims), float(count))


def logsumexp(x, axis=None, keepdims: bool = False):
    vx = value_of(x)
    out = scipy.special.logsumexp(vx, axis=axis, keepdims=True)
    weights = np.exp(vx - out)
    result = out if keepdims else np.squeeze(out, axis=axis)

    def grad(g):
        g = np.asarray(g)
        if not keepdims:
            g = np.expand_dims(g, axis) if axis is not None else np.reshape(g, (1,) * vx.ndim)
        return g * weights

    return _apply(np.asarray(result), (x,), (grad,))


def log_softmax(x, axis: int = -1):
    vx = value_of(x)
    out = vx - scipy.special.logsumexp(vx, axis=axis, keepdims=True)
    probs = np.exp(out)
    return _apply(out, (x,), (lambda g: g - probs * np.sum(g, axis=axis, keepdims=True),))


# Cholesky-based primitives


def cholesky(A, base_jitter: float = DEFAULT_JITTER):
    """
    Lower Cholesky factor of ``A`` with adaptive jitter.

    The adjoint is the symmetric form of the standard Cholesky backward pass:
    ``A_bar = sym(L^-T Phi(L^T L_bar) L^-1)`` with ``Phi`` taking the lower triangle and
    halving the diagonal.
    """
    factor = cholesky_with_jitter(value_of(A), base_jitter=base_jitter)
    L = factor.lower

    def grad(g):
        P = L.T @ np.tril(g)
        P = np.tril(P)
        P[np.diag_indices_from(P)] *= 0.5
        left = scipy.linalg.solve_triangular(L, P, lower=True, trans=1, check_finite=False)
        S = scipy.linalg.solve_triangular(L, left.T, lower=True, trans=1, check_finite=False).T
        return 0.5 * (S + S.T)

    return _apply(L, (A,), (grad,))


def solve_triangular(L, B, trans: bool = False):
    """Solve ``L X = B`` (or ``L^T X = B`` when ``trans``) for lower-triangular ``L``."""
    vL, vB = value_of(L), value_of(B)
    X = scipy.linalg.solve_triangular(vL, vB, lower=True, trans=1 if trans else 0, check_finite=False)

    def grad_B(g):
        return scipy.linalg.solve_triangular(vL, g, lower=True, trans=0 if trans else 1, check_finite=False)

    def grad_L(g):
        gB = grad_B(g)
        X2 = X if X.ndim > 1 else X[:, None]
        gB2 = gB if gB.ndim > 1 else gB[:, None]
        if trans:
            return -np.tril(X2 @ gB2.T)
        return -np.tril(gB2 @ X2.T)

    return _apply(X, (L, B), (grad_L, grad_B))


def solve_posdef(L, B):
    """Solve ``(L L^T) X = B`` given the lower factor ``L``."""
    return solve_triangular(L, solve_triangular(L, B), trans=True)


def logdet_from_cholesky(L):
    """``log|L L^T| = 2 * sum(log diag(L))``."""
    vL = value_of(L)
    d = np.diag(vL)
    return _apply(np.asarray(2.0 * np.sum(np.log(d))), (L,), (lambda g: np.diag(2.0 * g / d),))


def _np_diag(x, k: int = 0):
    if k != 0:
        raise NotImplementedError("Only the main diagonal is supported")
    return diag_embed(x) if value_of(x).ndim == 1 else diag_part(x)


UFUNC_PRIMITIVES = {
    np.add: add,
    np.subtract: subtract,
    np.multiply: multiply,
    np.true_divide: divide,
    np.negative: negative,
    np.exp: exp,
    np.log: log,
    np.sqrt: sqrt,
    np.square: square,
    np.matmul: matmul,
}

FUNCTION_PRIMITIVES = {
    np.sum: sum,
    np.mean: mean,
    np.transpose: transpose,
    np.reshape: reshape,
    np.stack: stack,
    np.concatenate: concatenate,
    np.diag: _np_diag,
    np.tril: tril,
}
