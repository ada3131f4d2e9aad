"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery for the encoder and the contrastive losses: a
:class:`Tensor` wraps an ndarray, records its parents, and knows how to push
an upstream gradient into them.  ``backward()`` on a scalar runs the tape in
reverse topological order.  Gradients have the same dtype as values, so the
whole graph can be evaluated in float32 (production) or float64 (gradient
checks) by choosing the leaf dtypes.

Only the ops the package needs are implemented; all of them support the
broadcasting patterns that actually occur (bias adds, batched matmul against
2-d weights, scalar exponents).
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum *g* over broadcast axes so it matches `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("value", "grad", "_parents", "_bwd", "requires_grad")

    def __init__(self, value, parents=(), bwd=None, requires_grad=False):
        self.value = np.asarray(value)
        self.grad = None
        self._parents = parents
        self._bwd = bwd
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def backward(self):
        """Backpropagate from this scalar through the recorded graph."""
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(topo):
            if node._bwd is not None:
                node._bwd()

    # Operator sugar; the right-hand side must already be a Tensor.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def constant(value, dtype=None) -> Tensor:
    arr = np.asarray(value)
    if dtype is not None:
        arr = arr.astype(dtype)
    return Tensor(arr)


def parameter(value) -> Tensor:
    return Tensor(np.asarray(value), requires_grad=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value + b.value, (a, b))

    def bwd():
        if a.requires_grad:
            a._accum(_unbroadcast(out.grad, a.value.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(out.grad, b.value.shape))

    out._bwd = bwd
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value - b.value, (a, b))

    def bwd():
        if a.requires_grad:
            a._accum(_unbroadcast(out.grad, a.value.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-out.grad, b.value.shape))

    out._bwd = bwd
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value * b.value, (a, b))

    def bwd():
        if a.requires_grad:
            a._accum(_unbroadcast(out.grad * b.value, a.value.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(out.grad * a.value, b.value.shape))

    out._bwd = bwd
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value / b.value, (a, b))

    def bwd():
        if a.requires_grad:
            a._accum(_unbroadcast(out.grad / b.value, a.value.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-out.grad * a.value / (b.value * b.value), b.value.shape))

    out._bwd = bwd
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.value * s, (a,))

    def bwd():
        if a.requires_grad:
            a._accum(out.grad * s)

    out._bwd = bwd
    return out


def shift(a: Tensor, s) -> Tensor:
    """Add a gradient-free array or scalar to *a*."""
    out = Tensor(a.value + np.asarray(s, dtype=a.value.dtype), (a,))

    def bwd():
        if a.requires_grad:
            a._accum(_unbroadcast(out.grad, a.value.shape))

    out._bwd = bwd
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value @ b.value, (a, b))

    def bwd():
        if a.requires_grad:
            ga = out.grad @ np.swapaxes(b.value, -1, -2)
            a._accum(_unbroadcast(ga, a.value.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.value, -1, -2) @ out.grad
            b._accum(_unbroadcast(gb, b.value.shape))

    out._bwd = bwd
    return out


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(int(i) for i in np.argsort(axes))
    out = Tensor(a.value.transpose(axes), (a,))

    def bwd():
        if a.requires_grad:
            a._accum(out.grad.transpose(inv))

    out._bwd = bwd
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = a.value.shape
    out = Tensor(a.value.reshape(shape), (a,))

    def bwd():
        if a.requires_grad:
            a._accum(out.grad.reshape(orig))

    out._bwd = bwd
    return out


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.value.sum(axis=axis, keepdims=keepdims), (a,))

    def bwd():
        if a.requires_grad:
            g = out.grad
            if not keepdims and axis is not None:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.value.shape).copy())

    out._bwd = bwd
    return out


def reduce_mean(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    n = a.value.shape[axis]
    out = Tensor(a.value.mean(axis=axis, keepdims=keepdims), (a,))

    def bwd():
        if a.requires_grad:
            g = out.grad
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.value.shape) / n)

    out._bwd = bwd
    return out


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """Elementwise max(a, floor); gradient flows only through unclamped entries."""
    out = Tensor(np.maximum(a.value, floor), (a,))

    def bwd():
        if a.requires_grad:
            a._accum(out.grad * (a.value > floor))

    out._bwd = bwd
    return out


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.value), (a,))

    def bwd():
        if a.requires_grad:
            a._accum(out.grad * out.value)

    out._bwd = bwd
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.value), (a,))

    def bwd():
        if a.requires_grad:
            a._accum(out.grad / a.value)

    out._bwd = bwd
    return out


def power(a: Tensor, p: float) -> Tensor:
    """a ** p for a fixed exponent."""
    out = Tensor(a.value ** p, (a,))

    def bwd():
        if a.requires_grad:
            a._accum(out.grad * p * a.value ** (p - 1.0))

    out._bwd = bwd
    return out


def power_pair(a: Tensor, p: Tensor) -> Tensor:
    """a ** p with a learnable scalar exponent; requires a > 0."""
    pv = p.value.reshape(())
    out = Tensor(a.value ** pv, (a, p))

    def bwd():
        if a.requires_grad:
            a._accum(out.grad * pv * a.value ** (pv - 1.0))
        if p.requires_grad:
            gp = (out.grad * out.value * np.log(a.value)).sum()
            p._accum(np.full_like(p.value, gp))

    out._bwd = bwd
    return out


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(a.value * _INV_SQRT2))
    out = Tensor(a.value * cdf, (a,))

    def bwd():
        if a.requires_grad:
            pdf = np.exp(-0.5 * a.value * a.value) * _INV_SQRT2PI
            a._accum(out.grad * (cdf + a.value * pdf))

    out._bwd = bwd
    return out


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis, computed with max subtraction."""
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s, (a,))

    def bwd():
        if a.requires_grad:
            g = out.grad
            a._accum(s * (g - (g * s).sum(axis=-1, keepdims=True)))

    out._bwd = bwd
    return out


def take_index(a: Tensor, index: int, axis: int) -> Tensor:
    """Select one slice along *axis* (the axis is collapsed)."""
    out = Tensor(np.take(a.value, index, axis=axis), (a,))

    def bwd():
        if a.requires_grad:
            g = np.zeros_like(a.value)
            sl = [slice(None)] * a.value.ndim
            sl[axis] = index
            g[tuple(sl)] = out.grad
            a._accum(g)

    out._bwd = bwd
    return out


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """For a 2-d tensor, pick a[i, idx[i]] for every row i."""
    rows = np.arange(a.value.shape[0])
    out = Tensor(a.value[rows, idx], (a,))

    def bwd():
        if a.requires_grad:
            g = np.zeros_like(a.value)
            np.add.at(g, (rows, idx), out.grad)
            a._accum(g)

    out._bwd = bwd
    return out


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    out = Tensor(np.concatenate([t.value for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.value.shape[axis] for t in tensors]

    def bwd():
        offset = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                sl = [slice(None)] * out.value.ndim
                sl[axis] = slice(offset, offset + size)
                t._accum(out.grad[tuple(sl)])
            offset += size

    out._bwd = bwd
    return out


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(np.broadcast_to(a.value, shape).copy(), (a,))

    def bwd():
        if a.requires_grad:
            a._accum(_unbroadcast(out.grad, a.value.shape))

    out._bwd = bwd
    return out


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero entries with probability p, rescale the rest."""
    if p <= 0.0:
        return a
    mask = (rng.random(a.value.shape) >= p).astype(a.value.dtype) / (1.0 - p)
    return mul(a, Tensor(mask))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis, as a composite op."""
    mu = reduce_mean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = reduce_mean(mul(xc, xc), axis=-1, keepdims=True)
    rstd = power(shift(var, eps), -0.5)
    return add(mul(mul(xc, rstd), gain), bias)
