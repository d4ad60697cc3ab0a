"""Minimal reverse-mode autodiff over float64 NumPy arrays.

Every trainable operation in the package is expressed through this tape so
its backward pass is analytic by construction and checkable with
`numerics.grad_check`.  The op set is deliberately small: broadcasting
arithmetic, (batched) matmul, a few elementwise nonlinearities, reductions,
logsumexp, and shape surgery.  Forward logsumexp/softmax route through
`kernels` so the compiled core accelerates both training and inference.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

from . import kernels

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (pure forward evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._bwd = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into `.grad` of every reachable leaf."""
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
    return t


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _node(data: np.ndarray, parents: Sequence[Tensor], bwd) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._bwd = bwd
    return out


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(a.data / b.data, (a, b), bwd)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects operands with ndim >= 2")

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _accum(a, _unbroadcast(ga, a.shape))
        _accum(b, _unbroadcast(gb, b.shape))

    return _node(a.data @ b.data, (a, b), bwd)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out_data = a.data**p

    def bwd(g):
        _accum(a, g * p * a.data ** (p - 1.0))

    return _node(out_data, (a,), bwd)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        _accum(a, g * out_data)

    return _node(out_data, (a,), bwd)


def log(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, g / a.data)

    return _node(np.log(a.data), (a,), bwd)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0

    def bwd(g):
        _accum(a, g * mask)

    return _node(a.data * mask, (a,), bwd)


def softplus(a) -> Tensor:
    """log(1 + exp(x)), stable for large |x|."""
    a = as_tensor(a)
    out_data = np.logaddexp(0.0, a.data)
    sig = np.exp(a.data - out_data)  # sigmoid without overflow

    def bwd(g):
        _accum(a, g * sig)

    return _node(out_data, (a,), bwd)


def tsum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.shape).copy())

    return _node(out_data, (a,), bwd)


def tmean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    ax = axis % a.ndim
    moved = np.moveaxis(a.data, ax, -1)
    lse = kernels.logsumexp_last(np.ascontiguousarray(moved))
    out_data = np.moveaxis(lse[..., None], -1, ax)
    if not keepdims:
        out_data = np.squeeze(out_data, axis=ax)

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, ax)
        lse_keep = np.moveaxis(lse[..., None], -1, ax)
        soft = np.exp(a.data - lse_keep)
        _accum(a, gg * soft)

    return _node(out_data, (a,), bwd)


def softmax(a, axis: int = -1) -> Tensor:
    """exp(x - logsumexp(x)) along `axis`; composed, so backward is automatic."""
    return exp(sub(a, logsumexp(a, axis=axis, keepdims=True)))


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, g.reshape(a.shape))

    return _node(a.data.reshape(shape), (a,), bwd)


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, np.swapaxes(g, ax1, ax2))

    return _node(np.swapaxes(a.data, ax1, ax2).copy(), (a,), bwd)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(ts, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _node(np.concatenate([t.data for t in ts], axis=axis), ts, bwd)


def diagonal(a) -> Tensor:
    """Main diagonal of a square 2-D tensor."""
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("diagonal expects a square 2-D tensor")

    def bwd(g):
        gd = np.zeros_like(a.data)
        np.fill_diagonal(gd, g)
        _accum(a, gd)

    return _node(np.diagonal(a.data).copy(), (a,), bwd)


def l2_normalize(a, axis: int = -1, eps: float = 0.0) -> Tensor:
    """x / ||x|| along `axis`."""
    sq = tsum(power(a, 2.0), axis=axis, keepdims=True)
    norm = power(add(sq, eps) if eps else sq, 0.5)
    return div(a, norm)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    return add(out, b) if b is not None else out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(power(centered, 2.0), axis=-1, keepdims=True)
    inv = power(add(var, eps), -0.5)
    return add(mul(mul(centered, inv), gamma), beta)
