"""Soft Actor-Critic with a squashed Gaussian policy and twin critics.

One continuous action per controlled vehicle.  The actor emits a tanh-squashed
Gaussian; twin critics with slowly tracking target copies provide the clipped
double-Q target y = r + gamma (1-done) (min Q' - alpha log pi).  The entropy
temperature is fixed by default, with optional auto-tuning toward a target
entropy behind a flag.
"""
from __future__ import annotations

import math
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .autodiff import Tensor, concat
from .checkpoint import load_module, save_module
from .layers import Affine, Module
from .optim import Adam

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
GAMMA = 0.99
TAU = 0.005
ALPHA = 0.12
ACTOR_LR = 3e-4
CRITIC_LR = 4e-4
BATCH_SIZE = 256
UPDATE_AFTER = 5000  # minimum transitions in the buffer before learning
TARGET_ENTROPY = -1.0  # negative action dimension

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@contextmanager
def frozen(params: list[Tensor]):
    """Temporarily stop gradients from accumulating into these parameters."""
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True


def squashed_log_prob(mu: Tensor, log_std: Tensor, u: Tensor) -> Tensor:
    """log pi(tanh(u)) for u drawn from N(mu, exp(log_std)), per sample.

    Includes the tanh change of variables via the stable identity
    log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)).
    """
    std = log_std.exp()
    z = (u - mu) / std
    gauss = -(z * z) * 0.5 - log_std - _LOG_SQRT_2PI
    correction = (Tensor(math.log(2.0)) - u - (u * -2.0).softplus()) * 2.0
    return gauss - correction


class Actor(Module):
    """Two hidden layers, then mean and log-std heads over one action."""

    def __init__(self, obs_dim: int = 98, hidden: int = 256, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.obs_dim = obs_dim
        self.l1 = Affine(obs_dim, hidden, rng)
        self.l2 = Affine(hidden, hidden, rng)
        self.mean_head = Affine(hidden, 1, rng)
        self.log_std_head = Affine(hidden, 1, rng)

    def __call__(self, s: Tensor) -> tuple[Tensor, Tensor]:
        h = self.l1(s).relu()
        h = self.l2(h).relu()
        return self.mean_head(h), self.log_std_head(h).clip(LOG_STD_MIN, LOG_STD_MAX)

    def sample(self, s: Tensor, rng: np.random.Generator) -> tuple[Tensor, Tensor]:
        """Reparameterized draw: (action (B,1), log-prob (B,1)) with graph."""
        mu, log_std = self(s)
        xi = rng.standard_normal(size=mu.shape)
        u = mu + log_std.exp() * Tensor(xi)
        return u.tanh(), squashed_log_prob(mu, log_std, u)


class Critic(Module):
    """Q(s, a) over the concatenated state-action vector."""

    def __init__(self, obs_dim: int = 98, hidden: int = 256, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.l1 = Affine(obs_dim + 1, hidden, rng)
        self.l2 = Affine(hidden, hidden, rng)
        self.head = Affine(hidden, 1, rng)

    def __call__(self, s: Tensor, a: Tensor) -> Tensor:
        h = self.l1(concat([s, a], axis=-1)).relu()
        h = self.l2(h).relu()
        return self.head(h)


def soft_update(online: Module, target: Module, tau: float = TAU):
    """target <- tau * online + (1 - tau) * target, elementwise."""
    if not (0.0 < tau <= 1.0):
        raise ValueError("tau must be in (0, 1]")
    src = online.named_parameters()
    for name, p in target.named_parameters().items():
        p.data *= 1.0 - tau
        p.data += tau * src[name].data


def bellman_target(
    r: np.ndarray, min_q: np.ndarray, log_prob: np.ndarray, done: np.ndarray,
    alpha: float, gamma: float,
) -> np.ndarray:
    """y = r + gamma (1-done) (min Q' - alpha log pi'), as plain arrays."""
    return r + gamma * (1.0 - done) * (min_q - alpha * log_prob)


class SacAgent:
    """Actor, twin critics, frozen target critics, and their optimizers."""

    def __init__(
        self,
        obs_dim: int = 98,
        hidden: int = 256,
        seed: int = 0,
        alpha: float = ALPHA,
        gamma: float = GAMMA,
        tau: float = TAU,
        actor_lr: float = ACTOR_LR,
        critic_lr: float = CRITIC_LR,
        auto_alpha: bool = False,
        target_entropy: float = TARGET_ENTROPY,
    ):
        self.obs_dim = obs_dim
        self.gamma = gamma
        self.tau = tau
        self.auto_alpha = auto_alpha
        self.target_entropy = target_entropy
        base = np.random.default_rng(seed)
        seeds = base.integers(0, 2**31 - 1, size=4)
        self.actor = Actor(obs_dim, hidden, seed=int(seeds[0]))
        self.critic1 = Critic(obs_dim, hidden, seed=int(seeds[1]))
        self.critic2 = Critic(obs_dim, hidden, seed=int(seeds[2]))
        self.target1 = Critic(obs_dim, hidden, seed=int(seeds[1]))
        self.target2 = Critic(obs_dim, hidden, seed=int(seeds[2]))
        for net in (self.target1, self.target2):
            for p in net.parameters():
                p.requires_grad = False
        self.rng = np.random.default_rng(int(seeds[3]))
        self.opt_actor = Adam(self.actor.parameters(), lr=actor_lr)
        self.opt_critic = Adam(
            self.critic1.parameters() + self.critic2.parameters(), lr=critic_lr
        )
        self._log_alpha = Tensor(np.array(math.log(alpha)), requires_grad=auto_alpha)
        self.opt_alpha = Adam([self._log_alpha], lr=actor_lr) if auto_alpha else None

    @property
    def alpha(self) -> float:
        return float(np.exp(self._log_alpha.data))

    # -- acting ---------------------------------------------------------------

    def sample_action(self, obs: np.ndarray, deterministic: bool = False) -> float:
        """Raw action in (-1, 1) for a single observation."""
        s = Tensor(np.asarray(obs, dtype=np.float64).reshape(1, self.obs_dim))
        if deterministic:
            mu, _ = self.actor(s)
            return float(np.tanh(mu.data[0, 0]))
        a, _ = self.actor.sample(s, self.rng)
        return float(a.data[0, 0])

    # -- learning -------------------------------------------------------------

    def target_value(self, reward: np.ndarray, next_obs: np.ndarray, done: np.ndarray) -> np.ndarray:
        """Bootstrap targets with a freshly sampled next action, shape (B,)."""
        s2 = Tensor(next_obs)
        a2, logp2 = self.actor.sample(s2, self.rng)
        a2 = Tensor(a2.data)  # targets carry no gradient
        q1 = self.target1(s2, a2).data[:, 0]
        q2 = self.target2(s2, a2).data[:, 0]
        return bellman_target(
            reward, np.minimum(q1, q2), logp2.data[:, 0], done, self.alpha, self.gamma
        )

    def critic_update(self, batch: dict[str, np.ndarray]) -> tuple[float, float]:
        y = Tensor(self.target_value(batch["reward"], batch["next_obs"], batch["done"]))
        s = Tensor(batch["obs"])
        a = Tensor(batch["action"].reshape(-1, 1))
        self.opt_critic.zero_grad()
        d1 = self.critic1(s, a).reshape(-1) - y
        d2 = self.critic2(s, a).reshape(-1) - y
        loss1 = (d1 * d1).mean() * 0.5
        loss2 = (d2 * d2).mean() * 0.5
        (loss1 + loss2).backward()
        self.opt_critic.step()
        return loss1.item(), loss2.item()

    def _min_q(self, s: Tensor, a: Tensor) -> Tensor:
        q1 = self.critic1(s, a)
        q2 = self.critic2(s, a)
        pick1 = Tensor((q1.data <= q2.data).astype(np.float64))
        return q1 * pick1 + q2 * (Tensor(1.0) - pick1)

    def actor_update(self, batch: dict[str, np.ndarray]) -> float:
        s = Tensor(batch["obs"])
        self.opt_actor.zero_grad()
        a, logp = self.actor.sample(s, self.rng)
        critic_params = self.critic1.parameters() + self.critic2.parameters()
        # freeze spans backward(): gradient flows through Q into the action
        # but never accumulates into critic weights
        with frozen(critic_params):
            q = self._min_q(s, a)
            loss = (logp * self.alpha - q).mean()
            loss.backward()
        self.opt_actor.step()
        if self.auto_alpha:
            self._tune_alpha(logp.data)
        return loss.item()

    def _tune_alpha(self, logp: np.ndarray):
        self.opt_alpha.zero_grad()
        # alpha rises while policy entropy sits below the target
        gap = Tensor(-(logp + self.target_entropy).mean())
        (self._log_alpha * gap).backward()
        self.opt_alpha.step()

    def update(self, batch: dict[str, np.ndarray]) -> dict[str, float]:
        l1, l2 = self.critic_update(batch)
        actor_loss = self.actor_update(batch)
        soft_update(self.critic1, self.target1, self.tau)
        soft_update(self.critic2, self.target2, self.tau)
        return {"critic1": l1, "critic2": l2, "actor": actor_loss, "alpha": self.alpha}

    # -- persistence ---------------------------------------------------------

    def save(self, prefix: str | Path):
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        meta = {"alpha": self.alpha, "obs_dim": float(self.obs_dim)}
        save_module(f"{prefix}_actor.npz", self.actor, meta)
        save_module(f"{prefix}_critic1.npz", self.critic1, meta)
        save_module(f"{prefix}_critic2.npz", self.critic2, meta)
        save_module(f"{prefix}_target1.npz", self.target1, meta)
        save_module(f"{prefix}_target2.npz", self.target2, meta)

    def load(self, prefix: str | Path) -> dict[str, float]:
        prefix = Path(prefix)
        meta = load_module(f"{prefix}_actor.npz", self.actor)
        load_module(f"{prefix}_critic1.npz", self.critic1)
        load_module(f"{prefix}_critic2.npz", self.critic2)
        load_module(f"{prefix}_target1.npz", self.target1)
        load_module(f"{prefix}_target2.npz", self.target2)
        self._log_alpha.data.fill(math.log(meta["alpha"]))
        return meta
