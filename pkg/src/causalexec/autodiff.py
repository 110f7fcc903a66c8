"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Forward code throughout the package is written against the dispatch
functions below (``tanh``, ``concat``, ``sum_`` ...), which accept either
plain ndarrays or ``Node``s.  Running on ndarrays costs nothing; wrapping
the leaves in ``Node``s records a tape and :func:`grad` plays it back.
The finite-difference check lives elsewhere (numerics) and never shares
code with this tape, so the two gradient routes stay independent.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

ArrayLike = "np.ndarray | float | Node"


class NonFiniteError(ValueError):
    """A public numeric operation produced NaN or Inf."""


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the parent's shape."""
    g = np.asarray(g, dtype=np.float64)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


class Node:
    """One value on the tape: a float64 array plus its provenance."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    # make numpy defer mixed ndarray-Node arithmetic to our reflected ops
    __array_ufunc__ = None
    __array_priority__ = 100

    def __init__(self, value, parents: tuple = (), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        return f"Node({self.value!r})"

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return take(self, key)


def is_node(x) -> bool:
    return isinstance(x, Node)


def value_of(x) -> np.ndarray:
    """The plain ndarray behind ``x`` whether or not it is on the tape."""
    if isinstance(x, Node):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _lift(x) -> tuple[np.ndarray, bool]:
    if isinstance(x, Node):
        return x.value, True
    return np.asarray(x, dtype=np.float64), False


def _make(value, parents, backward):
    """Create a Node only if at least one parent is tracked."""
    tracked = [p for p in parents if isinstance(p, Node)]
    if not tracked:
        return np.asarray(value, dtype=np.float64)
    return Node(value, tuple(tracked), backward)


# ---------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------

def add(a, b):
    av, at = _lift(a)
    bv, bt = _lift(b)
    out = av + bv

    def backward(g):
        grads = []
        if at:
            grads.append(_unbroadcast(g, av.shape))
        if bt:
            grads.append(_unbroadcast(g, bv.shape))
        return grads

    return _make(out, (a, b), backward)


def sub(a, b):
    av, at = _lift(a)
    bv, bt = _lift(b)
    out = av - bv

    def backward(g):
        grads = []
        if at:
            grads.append(_unbroadcast(g, av.shape))
        if bt:
            grads.append(_unbroadcast(-g, bv.shape))
        return grads

    return _make(out, (a, b), backward)


def mul(a, b):
    av, at = _lift(a)
    bv, bt = _lift(b)
    out = av * bv

    def backward(g):
        grads = []
        if at:
            grads.append(_unbroadcast(g * bv, av.shape))
        if bt:
            grads.append(_unbroadcast(g * av, bv.shape))
        return grads

    return _make(out, (a, b), backward)


def div(a, b):
    av, at = _lift(a)
    bv, bt = _lift(b)
    out = av / bv

    def backward(g):
        grads = []
        if at:
            grads.append(_unbroadcast(g / bv, av.shape))
        if bt:
            grads.append(_unbroadcast(-g * av / (bv * bv), bv.shape))
        return grads

    return _make(out, (a, b), backward)


def power(a, exponent: float):
    av, _ = _lift(a)
    p = float(exponent)
    out = av ** p

    def backward(g):
        return [g * p * av ** (p - 1.0)]

    return _make(out, (a,), backward)


def matmul(a, b):
    av, at = _lift(a)
    bv, bt = _lift(b)
    out = av @ bv

    def backward(g):
        g = np.asarray(g, dtype=np.float64)
        grads = []
        if at:
            if av.ndim == 1 and bv.ndim == 2:      # (n,) @ (n,m) -> (m,)
                grads.append(bv @ g)
            elif av.ndim == 2 and bv.ndim == 1:    # (n,m) @ (m,) -> (n,)
                grads.append(np.outer(g, bv))
            elif av.ndim == 1 and bv.ndim == 1:    # inner product
                grads.append(g * bv)
            else:                                   # (n,k) @ (k,m)
                grads.append(g @ bv.T)
        if bt:
            if av.ndim == 1 and bv.ndim == 2:
                grads.append(np.outer(av, g))
            elif av.ndim == 2 and bv.ndim == 1:
                grads.append(av.T @ g)
            elif av.ndim == 1 and bv.ndim == 1:
                grads.append(g * av)
            else:
                grads.append(av.T @ g)
        return grads

    return _make(out, (a, b), backward)


def take(a, key):
    av, _ = _lift(a)
    out = av[key]

    def backward(g):
        full = np.zeros_like(av)
        np.add.at(full, key, g)
        return [full]

    return _make(out, (a,), backward)


def reshape(a, shape):
    av, _ = _lift(a)
    out = av.reshape(shape)

    def backward(g):
        return [np.asarray(g).reshape(av.shape)]

    return _make(out, (a,), backward)


def transpose(a):
    av, _ = _lift(a)
    out = av.T

    def backward(g):
        return [np.asarray(g).T]

    return _make(out, (a,), backward)


def concat(parts: Sequence, axis: int = 0):
    vals = [value_of(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    if not any(isinstance(p, Node) for p in parts):
        return out
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)
    tracked_idx = [i for i, p in enumerate(parts) if isinstance(p, Node)]

    def backward(g):
        g = np.asarray(g)
        pieces = []
        for i in tracked_idx:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return pieces

    return Node(out, tuple(parts[i] for i in tracked_idx), backward)


def sum_(a, axis=None):
    av, _ = _lift(a)
    out = av.sum(axis=axis)

    def backward(g):
        if axis is None:
            return [np.broadcast_to(g, av.shape).copy()]
        g = np.expand_dims(np.asarray(g), axis)
        return [np.broadcast_to(g, av.shape).copy()]

    return _make(out, (a,), backward)


def mean_(a, axis=None):
    av, _ = _lift(a)
    n = av.size if axis is None else av.shape[axis]
    return div(sum_(a, axis=axis), float(n))


def tanh(a):
    av, _ = _lift(a)
    out = np.tanh(av)

    def backward(g):
        return [g * (1.0 - out * out)]

    return _make(out, (a,), backward)


def sigmoid(a):
    av, _ = _lift(a)
    out = _sigmoid_np(np.atleast_1d(av)).reshape(av.shape)

    def backward(g):
        return [g * out * (1.0 - out)]

    return _make(out, (a,), backward)


def relu(a):
    av, _ = _lift(a)
    mask = av > 0
    out = av * mask

    def backward(g):
        return [g * mask]

    return _make(out, (a,), backward)


def softplus(a):
    av, _ = _lift(a)
    out = np.logaddexp(0.0, av)

    def backward(g):
        return [g * _sigmoid_np(av)]

    return _make(out, (a,), backward)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def exp(a):
    av, _ = _lift(a)
    out = np.exp(av)

    def backward(g):
        return [g * out]

    return _make(out, (a,), backward)


def log(a):
    av, _ = _lift(a)
    out = np.log(av)

    def backward(g):
        return [g / av]

    return _make(out, (a,), backward)


def abs_(a):
    av, _ = _lift(a)
    out = np.abs(av)

    def backward(g):
        return [g * np.sign(av)]

    return _make(out, (a,), backward)


def square(a):
    return mul(a, a)


def dot(a, b):
    """Inner product of two vectors."""
    return sum_(mul(a, b))


def masked_softmax(scores, mask_keep: np.ndarray, axis: int = -1):
    """Softmax along ``axis`` restricted to entries where ``mask_keep``.

    Rows with no kept entry come out all-zero.  ``mask_keep`` is a plain
    boolean array, never tracked.
    """
    sv, _ = _lift(scores)
    keep = np.asarray(mask_keep, dtype=bool)
    neg = np.where(keep, sv, -np.inf)
    mx = np.max(neg, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    ex = np.where(keep, np.exp(sv - mx), 0.0)
    denom = ex.sum(axis=axis, keepdims=True)
    safe = np.where(denom > 0.0, denom, 1.0)
    out = ex / safe

    def backward(g):
        g = np.asarray(g)
        inner = (g * out).sum(axis=axis, keepdims=True)
        return [out * (g - inner)]

    return _make(out, (scores,), backward)


def softmax(scores, axis: int = -1):
    sv, _ = _lift(scores)
    return masked_softmax(scores, np.ones(sv.shape, dtype=bool), axis=axis)


# ---------------------------------------------------------------------
# tape playback
# ---------------------------------------------------------------------

def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Node) -> None:
    """Accumulate ``grad`` on every tape node reachable from ``root``."""
    if root.value.ndim != 0:
        raise ValueError("backward() expects a scalar output")
    order = _topo_order(root)
    root.grad = np.ones((), dtype=np.float64)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        parent_grads = node._backward(node.grad)
        for parent, pg in zip(node._parents, parent_grads):
            pg = np.asarray(pg, dtype=np.float64)
            if parent.grad is None:
                parent.grad = pg.copy()
            else:
                parent.grad = parent.grad + pg


def grad(f: Callable, x: np.ndarray) -> np.ndarray:
    """Gradient of a scalar-valued ``f`` at ``x`` via the reverse tape.

    Raises :class:`NonFiniteError` naming the first offending coordinate
    if the objective value or any gradient entry is not finite.
    """
    leaf = Node(np.asarray(x, dtype=np.float64))
    out = f(leaf)
    if not isinstance(out, Node):
        # f ignored its argument; the gradient is identically zero
        val = np.asarray(value_of(out), dtype=np.float64)
        if val.ndim != 0:
            raise ValueError("grad() expects a scalar-valued function")
        if not np.isfinite(val):
            raise NonFiniteError("objective value is not finite")
        return np.zeros_like(leaf.value)
    if out.value.ndim != 0:
        raise ValueError("grad() expects a scalar-valued function")
    if not np.isfinite(out.value):
        raise NonFiniteError("objective value is not finite")
    backward(out)
    g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
    if not np.all(np.isfinite(g)):
        bad = int(np.argmax(~np.isfinite(np.asarray(g).ravel())))
        raise NonFiniteError(f"gradient is not finite at coordinate {bad}")
    return np.asarray(g, dtype=np.float64)


def value_and_grad(f: Callable, x: np.ndarray) -> tuple[float, np.ndarray]:
    leaf = Node(np.asarray(x, dtype=np.float64))
    out = f(leaf)
    if not isinstance(out, Node):
        val = float(value_of(out))
        if not np.isfinite(val):
            raise NonFiniteError("objective value is not finite")
        return val, np.zeros_like(leaf.value)
    if not np.isfinite(out.value):
        raise NonFiniteError("objective value is not finite")
    backward(out)
    g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
    if not np.all(np.isfinite(g)):
        bad = int(np.argmax(~np.isfinite(np.asarray(g).ravel())))
        raise NonFiniteError(f"gradient is not finite at coordinate {bad}")
    return float(out.value), np.asarray(g, dtype=np.float64)
