"""Minimal reverse-mode gradient tape over numpy arrays.

The attention system and the feature-weight training only ever build small,
fixed-shape computation graphs, so a general framework is unnecessary: a
value node records its parents and a vector-Jacobian callback, and
:func:`backward` replays the tape in reverse topological order.  Only the
operations those models need are provided.
"""

from __future__ import annotations

import numpy as np

from .errors import TrainingDiverged


class Var:
    """One node of the tape: a float64 array plus its backward rule."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(self, value, _parents=(), _vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.value.shape

    # -- operator sugar -------------------------------------------------
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

    def __getitem__(self, index):
        return take(self, index)

    def __repr__(self):
        return f"Var({self.value!r})"


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value + b.value

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Var(out, (a, b), vjp)


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value - b.value

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Var(out, (a, b), vjp)


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value * b.value

    def vjp(g):
        return (
            _unbroadcast(g * b.value, a.shape),
            _unbroadcast(g * a.value, b.shape),
        )

    return Var(out, (a, b), vjp)


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value / b.value

    def vjp(g):
        return (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * a.value / (b.value**2), b.shape),
        )

    return Var(out, (a, b), vjp)


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value @ b.value

    def vjp(g):
        av, bv = a.value, b.value
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv, g * av
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        if av.ndim == 1 and bv.ndim == 2:
            return bv @ g, np.outer(av, g)
        return g @ bv.T, av.T @ g

    return Var(out, (a, b), vjp)


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.value)

    def vjp(g):
        return (g * out,)

    return Var(out, (a,), vjp)


def log(a) -> Var:
    a = as_var(a)
    out = np.log(a.value)

    def vjp(g):
        return (g / a.value,)

    return Var(out, (a,), vjp)


def tanh(a) -> Var:
    a = as_var(a)
    out = np.tanh(a.value)

    def vjp(g):
        return (g * (1.0 - out**2),)

    return Var(out, (a,), vjp)


def sigmoid(a) -> Var:
    a = as_var(a)
    out = 1.0 / (1.0 + np.exp(-a.value))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return Var(out, (a,), vjp)


def softplus(a) -> Var:
    a = as_var(a)
    out = np.logaddexp(0.0, a.value)

    def vjp(g):
        return (g / (1.0 + np.exp(-a.value)),)

    return Var(out, (a,), vjp)


def softmax(a, axis=-1) -> Var:
    a = as_var(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Var(out, (a,), vjp)


def vsum(a, axis=None) -> Var:
    a = as_var(a)
    out = a.value.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return Var(out, (a,), vjp)


def mean(a, axis=None) -> Var:
    a = as_var(a)
    count = a.value.size if axis is None else a.value.shape[axis]
    return mul(vsum(a, axis=axis), 1.0 / count)


def prod(a, axis=-1) -> Var:
    """Product reduction with a zero-safe gradient.

    The partial for entry i is the product of all other entries along the
    axis, computed from prefix/suffix cumulative products so a zero entry
    never yields 0/0.
    """
    a = as_var(a)
    out = a.value.prod(axis=axis)

    def vjp(g):
        x = a.value
        one = np.ones_like(np.take(x, [0], axis=axis))
        left = np.cumprod(x, axis=axis)
        head = np.take(left, range(x.shape[axis] - 1), axis=axis)
        left = np.concatenate([one, head], axis=axis)
        rev = np.flip(x, axis=axis)
        right = np.cumprod(rev, axis=axis)
        head = np.take(right, range(x.shape[axis] - 1), axis=axis)
        right = np.flip(np.concatenate([one, head], axis=axis), axis=axis)
        return (np.expand_dims(g, axis) * left * right,)

    return Var(out, (a,), vjp)


def take(a, index) -> Var:
    """Indexing/gather; the backward pass scatter-adds into the source."""
    a = as_var(a)
    out = a.value[index]

    def vjp(g):
        grad = np.zeros_like(a.value)
        np.add.at(grad, index, g)
        return (grad,)

    return Var(np.array(out, dtype=np.float64, copy=True), (a,), vjp)


def concat(parts, axis=0) -> Var:
    parts = [as_var(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Var(out, tuple(parts), vjp)


def stack(parts, axis=0) -> Var:
    parts = [as_var(p) for p in parts]
    out = np.stack([p.value for p in parts], axis=axis)

    def vjp(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Var(out, tuple(parts), vjp)


def backward(root: Var):
    """Accumulate d(root)/d(node) into ``grad`` for every node in the tape."""
    order: list[Var] = []
    seen: set[int] = set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack_.append((p, False))

    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                parent.grad += g


class ParamStore:
    """Named leaf tensors exposed as Vars for one optimization step."""

    def __init__(self, tensors: dict[str, np.ndarray]):
        self.tensors = {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}

    def leaves(self) -> dict[str, Var]:
        return {k: Var(v) for k, v in self.tensors.items()}

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.tensors.items()})


class SGD:
    def __init__(self, lr=1e-2):
        self.lr = lr

    def step(self, store: ParamStore, leaves: dict[str, Var]):
        for name, var in leaves.items():
            if var.grad is not None:
                store.tensors[name] -= self.lr * var.grad


class Adam:
    def __init__(self, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t = 0

    def step(self, store: ParamStore, leaves: dict[str, Var]):
        self._t += 1
        for name, var in leaves.items():
            if var.grad is None:
                continue
            g = var.grad
            m = self._m.setdefault(name, np.zeros_like(g))
            v = self._v.setdefault(name, np.zeros_like(g))
            m += (1 - self.beta1) * (g - m)
            v += (1 - self.beta2) * (g * g - v)
            mhat = m / (1 - self.beta1**self._t)
            vhat = v / (1 - self.beta2**self._t)
            store.tensors[name] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def check_finite(value, what="loss"):
    if not np.all(np.isfinite(value)):
        raise TrainingDiverged(f"{what} became non-finite")
