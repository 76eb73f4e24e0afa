"""Small synthetic tasks that exercise the learners in isolation.

The double integrator gives the actor-critic a fast sanity target: drive a
point mass to the origin under bounded acceleration.  The sequence task
gives the risk predictor a separable classification problem whose signal
lives entirely in the final action slot.
"""
from __future__ import annotations

import numpy as np

from .risk import INPUT_DIM, N_WINDOW, StateActionSequence

TOY_DT = 0.1
TOY_HORIZON = 200


class DoubleIntegrator:
    """1-D point mass: state (position, velocity), action = acceleration."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self.pos = 0.0
        self.vel = 0.0
        self.t = 0

    def reset(self) -> np.ndarray:
        side = 1.0 if self.rng.uniform() < 0.5 else -1.0
        self.pos = side * self.rng.uniform(0.5, 1.5)
        self.vel = 0.0
        self.t = 0
        return self.obs()

    def obs(self) -> np.ndarray:
        return np.array([self.pos, self.vel])

    def step(self, action: float) -> tuple[np.ndarray, float, bool]:
        a = float(np.clip(action, -1.0, 1.0))
        self.vel += a * TOY_DT
        self.pos += self.vel * TOY_DT
        self.t += 1
        reward = -(self.pos * self.pos) * TOY_DT
        return self.obs(), reward, self.t >= TOY_HORIZON


def toy_double_integrator(seed: int = 0) -> DoubleIntegrator:
    return DoubleIntegrator(seed)


def scripted_policy(obs: np.ndarray) -> float:
    """Proportional-derivative brake toward the origin; near-optimal here."""
    pos, vel = float(obs[0]), float(obs[1])
    return float(np.clip(-1.2 * pos - 2.0 * vel, -1.0, 1.0))


def rollout(env: DoubleIntegrator, policy, episodes: int = 1) -> float:
    """Mean undiscounted return of ``policy(obs) -> action`` over episodes."""
    total = 0.0
    for _ in range(episodes):
        obs = env.reset()
        done = False
        while not done:
            obs, r, done = env.step(policy(obs))
            total += r
    return total / episodes


def random_policy(seed: int = 0):
    rng = np.random.default_rng(seed)
    return lambda obs: float(rng.uniform(-1.0, 1.0))


def synthetic_sequence_task(seed: int, n: int) -> list[StateActionSequence]:
    """Balanced windows whose label is 1 exactly when the last action > 0.

    Every other entry is uninformative noise, so only a model that reads
    the final position can separate the classes.
    """
    if n < 1:
        raise ValueError("need at least one sequence")
    rng = np.random.default_rng(seed)
    ones = n // 2
    labels = np.array([1] * ones + [0] * (n - ones))
    rng.shuffle(labels)
    out = []
    for label in labels:
        x = rng.uniform(0.0, 1.0, size=(N_WINDOW, INPUT_DIM))
        x[:, -1] = rng.uniform(-1.0, 1.0, size=N_WINDOW)
        margin = rng.uniform(0.05, 1.0)
        x[-1, -1] = margin if label == 1 else -margin
        out.append(StateActionSequence(x, N_WINDOW, int(label)))
    return out
