"""Transformer collision-risk predictor with a linear recency bias.

The model reads the last N state-action pairs (front zero-padded), adds a
fixed sinusoidal position code, runs pre-norm encoder blocks whose attention
scores receive an additive N x N bias that grows more negative toward older
positions, and maps the final token's representation through a small MLP
head to a probability.  Trained with binary cross-entropy on balanced
batches of collision / safe windows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .layers import MLP, Affine, LayerNorm, Module, MultiHeadAttention, sinusoidal_positions
from .optim import Adam

N_WINDOW = 10
BETA = 0.2
INPUT_DIM = 99  # 98 observation entries + 1 raw action
D_MODEL = 128
HEADS = 4
ENC_LAYERS = 2
ENC_HIDDEN = 512
HEAD_WIDTHS = (128, 64, 1)
LEARNING_RATE = 1e-5  # reference rate; the desk loop runs 1e-4 (see config)


def build_bias(n: int = N_WINDOW, beta: float = BETA) -> np.ndarray:
    """B[i][j] = beta * (j - (n-1)): zero on the newest column, linearly
    more negative toward older positions, constant down each column."""
    if n < 1:
        raise ValueError("sequence length must be at least 1")
    if beta < 0.0:
        raise ValueError("decay factor must be nonnegative")
    cols = beta * (np.arange(n) - (n - 1)).astype(np.float64)
    return np.tile(cols, (n, 1))


@dataclass
class StateActionSequence:
    """Length-N window of [state; raw action] rows, front zero-padded."""

    x: np.ndarray  # (N_WINDOW, INPUT_DIM)
    valid_length: int
    label: int | None = None  # 1 collision, 0 arrived, None unlabeled

    def __post_init__(self):
        if self.x.shape != (N_WINDOW, INPUT_DIM):
            raise ValueError(f"sequence must be {(N_WINDOW, INPUT_DIM)}, got {self.x.shape}")
        if not (0 <= self.valid_length <= N_WINDOW):
            raise ValueError("valid_length out of range")


class EncoderBlock(Module):
    """Pre-norm residual block: attention then MLP, both on normalized input."""

    def __init__(self, d_model: int, heads: int, hidden: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, heads, rng)
        self.norm2 = LayerNorm(d_model)
        self.mlp = MLP([d_model, hidden, d_model], rng)

    def __call__(self, z: Tensor, bias: np.ndarray | None) -> Tensor:
        z = self.attn(self.norm1(z), bias) + z
        return self.mlp(self.norm2(z)) + z


class RiskPredictor(Module):
    """Sequence classifier producing a collision probability in (0, 1)."""

    def __init__(
        self,
        seed: int = 0,
        beta: float = BETA,
        n: int = N_WINDOW,
        input_dim: int = INPUT_DIM,
        d_model: int = D_MODEL,
        heads: int = HEADS,
        layers: int = ENC_LAYERS,
        hidden: int = ENC_HIDDEN,
        head_widths: tuple[int, ...] = HEAD_WIDTHS,
    ):
        rng = np.random.default_rng(seed)
        self.beta = beta
        self.n = n
        self.input_dim = input_dim
        self.d_model = d_model
        self.embed = Affine(input_dim, d_model, rng)
        self.pos = sinusoidal_positions(n, d_model)
        self.blocks = [EncoderBlock(d_model, heads, hidden, rng) for _ in range(layers)]
        widths = [d_model, *head_widths]
        self.head = MLP(widths, rng)
        # beta == 0 short-circuits to the standard attention path
        self.bias = build_bias(n, beta) if beta != 0.0 else None

    # -- forward -----------------------------------------------------------

    def _encode(self, x: np.ndarray, bias) -> Tensor:
        z = self.embed(Tensor(x)) + Tensor(self.pos)
        for block in self.blocks:
            z = block(z, bias)
        return z

    def logits(self, x: np.ndarray, bias_override=...) -> Tensor:
        """Pre-sigmoid scores for a batch, shape (B,). x: (B, N, INPUT_DIM)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite entries in predictor input")
        if x.shape[1] != self.n or x.shape[2] != self.input_dim:
            raise ValueError(f"expected (B, {self.n}, {self.input_dim}), got {x.shape}")
        bias = self.bias if bias_override is ... else bias_override
        z = self._encode(x, bias)
        # pooled readout: how much the newest steps dominate is decided by the
        # recency bias inside attention, not by a privileged readout slot
        pooled = z.mean(axis=1)
        return self.head(pooled).reshape(x.shape[0])

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Risk probabilities, shape (B,) (or scalar array for one window)."""
        return self.logits(x).sigmoid().data

    def predict_one(self, seq: StateActionSequence | np.ndarray) -> float:
        x = seq.x if isinstance(seq, StateActionSequence) else seq
        return float(self.predict(x[None])[0])

    # -- training -----------------------------------------------------------

    def make_optimizer(self, lr: float = LEARNING_RATE) -> Adam:
        return Adam(self.parameters(), lr=lr)

    def train_step(self, opt: Adam, x: np.ndarray, labels: np.ndarray) -> float:
        """One BCE step on a batch; returns the pre-update mean loss."""
        labels = np.asarray(labels, dtype=np.float64)
        if labels.size == 0:
            raise ValueError("empty training batch")
        opt.zero_grad()
        logit = self.logits(x)
        # bce(x, y) = softplus(x) - x*y, numerically stable in both tails
        loss = (logit.softplus() - logit * Tensor(labels)).mean()
        loss.backward()
        opt.step()
        return loss.item()

    # -- probes ---------------------------------------------------------------

    def sensitivity_probe(
        self, seq: StateActionSequence | np.ndarray, action_values: list[float]
    ) -> list[tuple[float, float]]:
        """Risk with the final action overwritten by each probe value."""
        base = seq.x if isinstance(seq, StateActionSequence) else np.asarray(seq)
        probes = np.repeat(base[None].astype(np.float64), len(action_values), axis=0)
        for i, a in enumerate(action_values):
            probes[i, -1, -1] = a
        risks = self.predict(probes)
        return [(float(a), float(r)) for a, r in zip(action_values, risks)]

    def attention_maps(self, x: np.ndarray) -> list[dict[str, np.ndarray]]:
        """Per block: raw scores, biased scores, and softmax weights.

        Scores are taken where the blocks compute them, on the normalized
        running representation.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        z = self.embed(Tensor(x)) + Tensor(self.pos)
        out = []
        for block in self.blocks:
            normed = block.norm1(z)
            raw, biased, weights = block.attn.attention_scores(normed, self.bias)
            out.append({"raw": raw, "biased": biased, "weights": weights})
            z = block(z, self.bias)
        return out


def load_predictor(path) -> RiskPredictor:
    """Rebuild a default-geometry predictor from checkpoint arrays + metadata."""
    from .checkpoint import load_module, read_meta

    meta = read_meta(path)
    model = RiskPredictor(seed=int(meta.get("seed", 0)), beta=float(meta.get("beta", BETA)))
    load_module(path, model)
    return model
