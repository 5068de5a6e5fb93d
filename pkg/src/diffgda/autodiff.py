"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Covers exactly the operation set the layer stack and losses need; all
values are float64. Non-Tensor operands are treated as constants and
receive no gradient.
"""
from __future__ import annotations

import gc
from contextlib import contextmanager

import numpy as np

Array = np.ndarray


@contextmanager
def gc_paused():
    """Suspend cyclic GC across a hot loop.

    The tape is acyclic (children reference parents only), so graphs are
    reclaimed by refcounting; the cyclic collector only adds pauses while
    thousands of nodes are being allocated per step.
    """
    enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if enabled:
            gc.enable()


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Computation-graph node wrapping a float64 ndarray."""

    __slots__ = ("value", "grad", "_parents", "_vjps")

    def __init__(self, value, _parents=(), _vjps=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = _parents
        self._vjps = _vjps

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def item(self) -> float:
        return float(self.value)

    def backward(self, seed: Array | float | None = None):
        """Accumulate d(self)/d(node) into .grad over the whole graph."""
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = (
            np.ones_like(self.value) if seed is None
            else np.asarray(seed, dtype=np.float64)
        )
        for node in reversed(order):
            g = node.grad
            if g is None:
                continue
            for p, vjp in zip(node._parents, node._vjps):
                pg = vjp(g)
                p.grad = pg if p.grad is None else p.grad + pg

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, negate(other) if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return add(negate(self), other)

    def __neg__(self):
        return negate(self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return multiply(self, power(other, -1.0))
        return multiply(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return take(self, key)


def _val(x) -> Array:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _wrap(value, parents_vjps: list[tuple[Tensor, object]]) -> Tensor:
    parents = tuple(p for p, _ in parents_vjps)
    vjps = tuple(v for _, v in parents_vjps)
    return Tensor(value, parents, vjps)


def add(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    links = []
    if isinstance(a, Tensor):
        links.append((a, lambda g, s=av.shape: _unbroadcast(g, s)))
    if isinstance(b, Tensor):
        links.append((b, lambda g, s=bv.shape: _unbroadcast(g, s)))
    return _wrap(av + bv, links)


def negate(a) -> Tensor:
    av = _val(a)
    links = [(a, lambda g: -g)] if isinstance(a, Tensor) else []
    return _wrap(-av, links)


def multiply(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    links = []
    if isinstance(a, Tensor):
        links.append((a, lambda g, s=av.shape: _unbroadcast(g * bv, s)))
    if isinstance(b, Tensor):
        links.append((b, lambda g, s=bv.shape: _unbroadcast(g * av, s)))
    return _wrap(av * bv, links)


def _unbroadcast_batch(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum matmul batch dims of `grad` down to the operand `shape`."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i in range(len(shape) - 2) if shape[i] == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def matmul(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    links = []
    if av.ndim == 1 and bv.ndim == 1:
        if isinstance(a, Tensor):
            links.append((a, lambda g: g * bv))
        if isinstance(b, Tensor):
            links.append((b, lambda g: g * av))
    elif av.ndim == 1:
        if isinstance(a, Tensor):
            links.append((a, lambda g: g @ np.swapaxes(bv, -1, -2)))
        if isinstance(b, Tensor):
            links.append((b, lambda g: av[:, None] * g[None, :]))
    elif bv.ndim == 1:
        if isinstance(a, Tensor):
            links.append((a, lambda g: g[..., :, None] * bv[None, :]))
        if isinstance(b, Tensor):
            links.append((b, lambda g: np.swapaxes(av, -1, -2) @ g))
    else:
        if isinstance(a, Tensor):
            links.append((a, lambda g, s=av.shape: _unbroadcast_batch(
                g @ np.swapaxes(bv, -1, -2), s)))
        if isinstance(b, Tensor):
            links.append((b, lambda g, s=bv.shape: _unbroadcast_batch(
                np.swapaxes(av, -1, -2) @ g, s)))
    return _wrap(av @ bv, links)


def transpose(a: Tensor) -> Tensor:
    return _wrap(a.value.T, [(a, lambda g: g.T)])


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return _wrap(np.swapaxes(a.value, ax1, ax2),
                 [(a, lambda g: np.swapaxes(g, ax1, ax2))])


def stack(parts: list) -> Tensor:
    """Stack along a new leading axis."""
    values = [_val(p) for p in parts]
    links = [(p, (lambda g, i=i: g[i]))
             for i, p in enumerate(parts) if isinstance(p, Tensor)]
    return _wrap(np.stack(values), links)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.value.shape
    return _wrap(a.value.reshape(shape), [(a, lambda g: g.reshape(old))])


def power(a: Tensor, exponent: float) -> Tensor:
    av = a.value
    return _wrap(av ** exponent, [(a, lambda g: g * exponent * av ** (exponent - 1.0))])


def square(a: Tensor) -> Tensor:
    av = a.value
    return _wrap(av * av, [(a, lambda g: g * (2.0 * av))])


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)
    return _wrap(out, [(a, lambda g: g * out)])


def log(a: Tensor) -> Tensor:
    av = a.value
    return _wrap(np.log(av), [(a, lambda g: g / av)])


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.value)
    return _wrap(out, [(a, lambda g: g * (0.5 / out))])


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0.0
    return _wrap(np.where(mask, a.value, 0.0), [(a, lambda g: g * mask)])


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_stable(a.value)
    return _wrap(out, [(a, lambda g: g * out * (1.0 - out))])


def _sigmoid_stable(x: Array) -> Array:
    pos = x >= 0
    out = np.empty_like(x)
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a: Tensor) -> Tensor:
    av = a.value
    out = np.maximum(av, 0.0) + np.log1p(np.exp(-np.abs(av)))
    return _wrap(out, [(a, lambda g: g * _sigmoid_stable(av))])


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.value.shape

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape).astype(np.float64)
        gx = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gx, shape).astype(np.float64)

    return _wrap(a.value.sum(axis=axis, keepdims=keepdims), [(a, vjp)])


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.value.size if axis is None else a.value.shape[axis]
    return multiply(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def concat(parts: list, axis: int = 0) -> Tensor:
    values = [_val(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    links = []
    offset = 0
    for p, v in zip(parts, values):
        width = v.shape[axis]
        if isinstance(p, Tensor):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(offset, offset + width)
            links.append((p, lambda g, sl=tuple(sl): g[sl]))
        offset += width
    return _wrap(out, links)


def take(a: Tensor, key) -> Tensor:
    shape = a.value.shape

    def vjp(g):
        full = np.zeros(shape, dtype=np.float64)
        np.add.at(full, key, g)
        return full

    return _wrap(a.value[key], [(a, vjp)])


def masked_softmax(a: Tensor, mask: Array) -> Tensor:
    """Row softmax over the last axis restricted to `mask` (bool).

    Rows with no admitted entry come out all-zero; admitted rows sum to 1.
    """
    av = a.value
    neg = np.where(mask, av, -np.inf)
    rowmax = neg.max(axis=-1, keepdims=True)
    rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
    e = np.where(mask, np.exp(neg - rowmax), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    safe = np.where(denom > 0.0, denom, 1.0)
    out = e / safe

    def vjp(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return out * (g - inner)

    return _wrap(out, [(a, vjp)])


class Adam:
    """Adam optimizer over a list of parameter Tensors."""

    def __init__(self, params: list[Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            mhat = self.m[i] / (1.0 - b1 ** self.t)
            vhat = self.v[i] / (1.0 - b2 ** self.t)
            p.value = p.value - self.lr * mhat / (np.sqrt(vhat) + self.eps)
