"""Network building blocks on top of the autodiff core.

Parameters are plain Tensors with requires_grad=True, owned by lightweight
modules that can enumerate them by name for optimizers and checkpoints.
Affine layers initialize uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
"""
from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, layer_norm, scaled_dot_attention


class Module:
    """Minimal parameter container with recursive enumeration."""

    def _params(self) -> dict[str, Tensor]:
        return {k: v for k, v in vars(self).items() if isinstance(v, Tensor)}

    def _children(self) -> dict[str, "Module"]:
        out = {}
        for k, v in vars(self).items():
            if isinstance(v, Module):
                out[k] = v
            elif isinstance(v, (list, tuple)):
                for i, item in enumerate(v):
                    if isinstance(item, Module):
                        out[f"{k}.{i}"] = item
        return out

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for k, t in self._params().items():
            out[f"{prefix}{k}"] = t
        for k, child in self._children().items():
            out.update(child.named_parameters(prefix=f"{prefix}{k}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


class Affine(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(in_dim)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(in_dim, out_dim)), requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, size=(out_dim,)), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.shift = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.shift)


class MLP(Module):
    """Affine stack with ReLU between layers; the last layer stays linear."""

    def __init__(self, dims: list[int], rng: np.random.Generator):
        self.layers = [Affine(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = x.relu()
        return x


class MultiHeadAttention(Module):
    """Self-attention over (batch, N, D) with an optional additive score bias.

    The bias (N x N) is added to every head's pre-softmax scores; bias=None
    short-circuits to the standard scaled dot-product path (no add at all).
    """

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator):
        if d_model % heads != 0:
            raise ValueError("model width must divide evenly across heads")
        self.d_model = d_model
        self.heads = heads
        self.d_k = d_model // heads
        self.wq = Affine(d_model, d_model, rng)
        self.wk = Affine(d_model, d_model, rng)
        self.wv = Affine(d_model, d_model, rng)
        self.wo = Affine(d_model, d_model, rng)

    def _split(self, x: Tensor, batch: int, n: int) -> Tensor:
        return x.reshape(batch, n, self.heads, self.d_k).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, bias: np.ndarray | Tensor | None = None) -> Tensor:
        batch, n, _ = x.shape
        q = self._split(self.wq(x), batch, n)
        k = self._split(self.wk(x), batch, n)
        v = self._split(self.wv(x), batch, n)
        out = scaled_dot_attention(q, k, v, bias)  # (batch, heads, n, d_k)
        out = out.transpose(0, 2, 1, 3).reshape(batch, n, self.d_model)
        return self.wo(out)

    def attention_scores(self, x: Tensor, bias: np.ndarray | Tensor | None = None):
        """Raw and biased pre-softmax scores plus weights, for inspection."""
        batch, n, _ = x.shape
        q = self._split(self.wq(x), batch, n)
        k = self._split(self.wk(x), batch, n)
        raw = (q @ k.swap_last()) * (1.0 / math.sqrt(self.d_k))
        biased = raw if bias is None else raw + Tensor._coerce(bias)
        weights = biased.softmax(-1)
        return raw.data, biased.data, weights.data


def sinusoidal_positions(n: int, d_model: int) -> np.ndarray:
    """Fixed transformer position encoding, shape (n, d_model)."""
    pos = np.arange(n)[:, None].astype(np.float64)
    idx = np.arange(d_model)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / d_model)
    enc = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return enc
