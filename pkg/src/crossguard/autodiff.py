"""Reverse-mode automatic differentiation on dense float64 arrays.

A Tensor wraps a numpy array plus a closure that routes the output gradient
back to its parents; backward() runs the closures in reverse topological
order.  Broadcasting follows numpy semantics, with gradients sum-reduced
back to each parent's shape.  Everything is float64: the networks here are
tiny and exact finite-difference checks matter more than speed.
"""
from __future__ import annotations

import math

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum-reduce a broadcast gradient back down to ``shape``."""
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
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data)
        needy = tuple(p for p in parents if p.requires_grad)
        if needy:
            out.requires_grad = True
            out._parents = needy
            out._backward = backward
        return out

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- autodiff driver --------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None):
        if not self.requires_grad:
            raise ValueError("backward on a tensor that requires no grad")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("implicit backward requires a scalar output")
            grad = np.ones_like(self.data)
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
        self._accumulate(np.asarray(grad, dtype=np.float64).reshape(self.data.shape))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic --------------------------------------------------------------

    @staticmethod
    def _coerce(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def __add__(self, other):
        other = Tensor._coerce(other)
        a, b = self, other

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))

        return Tensor._make(a.data + b.data, (a, b), bwd)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def bwd(g):
            a._accumulate(-g)

        return Tensor._make(-a.data, (a,), bwd)

    def __sub__(self, other):
        return self + (-Tensor._coerce(other))

    def __rsub__(self, other):
        return Tensor._coerce(other) + (-self)

    def __mul__(self, other):
        other = Tensor._coerce(other)
        a, b = self, other

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._make(a.data * b.data, (a, b), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._coerce(other)
        a, b = self, other

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return Tensor._make(a.data / b.data, (a, b), bwd)

    def __rtruediv__(self, other):
        return Tensor._coerce(other) / self

    def __pow__(self, exponent: float):
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents are supported")
        a = self

        def bwd(g):
            a._accumulate(g * exponent * a.data ** (exponent - 1.0))

        return Tensor._make(a.data**exponent, (a,), bwd)

    def __matmul__(self, other):
        other = Tensor._coerce(other)
        a, b = self, other
        if a.data.ndim < 2 or b.data.ndim < 2:
            raise ValueError("matmul operands must be at least 2-D here")

        def bwd(g):
            if a.requires_grad:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
                a._accumulate(_unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                if b.data.ndim == 2 and a.data.ndim > 2:
                    # shared weight against stacked inputs: fold the batch into
                    # one flat product instead of materializing a per-item
                    # (in, out) stack and summing it afterwards
                    k = a.data.shape[-1]
                    gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
                else:
                    gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                b._accumulate(_unbroadcast(gb, b.data.shape))

        return Tensor._make(np.matmul(a.data, b.data), (a, b), bwd)

    # -- shape ops ----------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.data.shape

        def bwd(g):
            a._accumulate(g.reshape(old))

        return Tensor._make(a.data.reshape(shape), (a,), bwd)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        inv = np.argsort(axes)
        a = self

        def bwd(g):
            a._accumulate(np.transpose(g, inv))

        return Tensor._make(np.transpose(a.data, axes), (a,), bwd)

    def swap_last(self):
        """Transpose the final two axes (batched matrix transpose)."""
        a = self

        def bwd(g):
            a._accumulate(np.swapaxes(g, -1, -2))

        return Tensor._make(np.swapaxes(a.data, -1, -2), (a,), bwd)

    def __getitem__(self, key):
        a = self

        def bwd(g):
            full = np.zeros_like(a.data)
            np.add.at(full, key, g)
            a._accumulate(full)

        return Tensor._make(a.data[key], (a,), bwd)

    # -- reductions ------------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self

        def bwd(g):
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape).copy())
                return
            gg = g
            if not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

        return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        elif isinstance(axis, tuple):
            n = int(np.prod([self.data.shape[a] for a in axis]))
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- elementwise nonlinearities ------------------------------------------------

    def relu(self):
        a = self
        mask = a.data > 0.0

        def bwd(g):
            a._accumulate(g * mask)

        return Tensor._make(np.where(mask, a.data, 0.0), (a,), bwd)

    def tanh(self):
        a = self
        y = np.tanh(a.data)

        def bwd(g):
            a._accumulate(g * (1.0 - y * y))

        return Tensor._make(y, (a,), bwd)

    def sigmoid(self):
        a = self
        y = np.empty_like(a.data)
        pos = a.data >= 0.0
        y[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
        ex = np.exp(a.data[~pos])
        y[~pos] = ex / (1.0 + ex)

        def bwd(g):
            a._accumulate(g * y * (1.0 - y))

        return Tensor._make(y, (a,), bwd)

    def exp(self):
        a = self
        y = np.exp(a.data)

        def bwd(g):
            a._accumulate(g * y)

        return Tensor._make(y, (a,), bwd)

    def log(self):
        a = self

        def bwd(g):
            a._accumulate(g / a.data)

        return Tensor._make(np.log(a.data), (a,), bwd)

    def softplus(self):
        """log(1 + e^x), computed stably as max(x,0) + log1p(e^-|x|)."""
        a = self
        y = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
        sig = np.empty_like(a.data)
        pos = a.data >= 0.0
        sig[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
        ex = np.exp(a.data[~pos])
        sig[~pos] = ex / (1.0 + ex)

        def bwd(g):
            a._accumulate(g * sig)

        return Tensor._make(y, (a,), bwd)

    def clip(self, lo: float, hi: float):
        """Clamp values; gradient passes only through the interior."""
        a = self
        inside = (a.data >= lo) & (a.data <= hi)

        def bwd(g):
            a._accumulate(g * inside)

        return Tensor._make(np.clip(a.data, lo, hi), (a,), bwd)

    def softmax(self, axis: int = -1):
        a = self
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)

        def bwd(g):
            inner = (g * y).sum(axis=axis, keepdims=True)
            a._accumulate(y * (g - inner))

        return Tensor._make(y, (a,), bwd)


# -- free functions ------------------------------------------------------------


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    tensors = [Tensor._coerce(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._make(data, tuple(tensors), bwd)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift (fused gradient)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def bwd(g):
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.data.shape))
        if shift.requires_grad:
            shift._accumulate(_unbroadcast(g, shift.data.shape))
        if x.requires_grad:
            gy = g * gain.data
            term = gy - gy.mean(axis=-1, keepdims=True) - xhat * (gy * xhat).mean(
                axis=-1, keepdims=True
            )
            x._accumulate(term * inv)

    data = xhat * gain.data + shift.data
    return Tensor._make(data, (x, gain, shift), bwd)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, bias: Tensor | np.ndarray | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d_k) + bias) v over the last two axes."""
    d_k = q.shape[-1]
    scores = (q @ k.swap_last()) * (1.0 / math.sqrt(d_k))
    if bias is not None:
        scores = scores + Tensor._coerce(bias)
    return scores.softmax(-1) @ v
