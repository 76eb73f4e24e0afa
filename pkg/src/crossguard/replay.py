"""Experience storage: flat transition ring plus label-pure sequence pools.

Three stores cooperate during training:

* ``TransitionBuffer`` holds (s, a, r, s', done) tuples for the actor-critic
  updates, overwriting oldest-first once full.
* two ``SequenceBuffer`` pools hold one final state-action window per
  completed trajectory: collisions land in the risk pool (label 1),
  successful crossings in the safe pool (label 0).  Balanced batches draw
  half from each.
* ``WindowTracker`` maintains the rolling last-N window per live vehicle.
  When a trajectory resolves, its final window snapshot is labeled and
  stored; truncated trajectories are dropped without a label.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .risk import INPUT_DIM, N_WINDOW, StateActionSequence

TRANSITION_CAPACITY = 1_000_000
SEQUENCE_CAPACITY = 10_000
LABEL_COLLISION = 1
LABEL_SAFE = 0


@dataclass
class Transition:
    obs: np.ndarray
    action: float
    reward: float
    next_obs: np.ndarray
    done: float  # 1.0 only when the successor state is genuinely terminal


class TransitionBuffer:
    """Uniform-sampling ring buffer over single-step transitions."""

    def __init__(self, capacity: int = TRANSITION_CAPACITY, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._store: list[Transition] = []
        self._write = 0
        self._rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self._store)

    def push(self, tr: Transition):
        if len(self._store) < self.capacity:
            self._store.append(tr)
        else:
            self._store[self._write] = tr
        self._write = (self._write + 1) % self.capacity

    def sample(self, batch: int) -> list[Transition]:
        if not self._store:
            raise ValueError("cannot sample from an empty buffer")
        idx = self._rng.integers(0, len(self._store), size=batch)
        return [self._store[i] for i in idx]

    def sample_arrays(self, batch: int) -> dict[str, np.ndarray]:
        rows = self.sample(batch)
        return {
            "obs": np.stack([t.obs for t in rows]),
            "action": np.array([t.action for t in rows], dtype=np.float64),
            "reward": np.array([t.reward for t in rows], dtype=np.float64),
            "next_obs": np.stack([t.next_obs for t in rows]),
            "done": np.array([t.done for t in rows], dtype=np.float64),
        }


class SequenceBuffer:
    """Ring of labeled windows; rejects rows whose label does not match."""

    def __init__(self, label: int, capacity: int = SEQUENCE_CAPACITY, seed: int = 0):
        self.label = label
        self.capacity = capacity
        self._store: list[StateActionSequence] = []
        self._write = 0
        self._rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self._store)

    def push(self, seq: StateActionSequence):
        if seq.label != self.label:
            raise ValueError(f"buffer holds label {self.label}, got {seq.label}")
        if len(self._store) < self.capacity:
            self._store.append(seq)
        else:
            self._store[self._write] = seq
        self._write = (self._write + 1) % self.capacity

    def sample(self, count: int) -> list[StateActionSequence]:
        if not self._store:
            raise ValueError("cannot sample from an empty buffer")
        idx = self._rng.integers(0, len(self._store), size=count)
        return [self._store[i] for i in idx]

    def save(self, path: str | Path):
        """Snapshot to .npz: stacked windows, valid lengths, shared label."""
        x = np.stack([s.x for s in self._store]) if self._store else np.zeros((0, N_WINDOW, INPUT_DIM))
        lengths = np.array([s.valid_length for s in self._store], dtype=np.int64)
        np.savez(path, x=x, valid_length=lengths, label=np.int64(self.label))

    def load(self, path: str | Path):
        blob = np.load(path)
        if int(blob["label"]) != self.label:
            raise ValueError("snapshot label does not match this buffer")
        self._store = [
            StateActionSequence(blob["x"][i].copy(), int(blob["valid_length"][i]), self.label)
            for i in range(blob["x"].shape[0])
        ]
        self._write = len(self._store) % self.capacity


def pad_window(rows: list[np.ndarray]) -> np.ndarray:
    """Stack up to N rows into an (N, 99) array, zero rows at the front."""
    if len(rows) > N_WINDOW:
        raise ValueError("window longer than N")
    out = np.zeros((N_WINDOW, INPUT_DIM), dtype=np.float64)
    if rows:
        out[N_WINDOW - len(rows):] = np.stack(rows)
    return out


class WindowTracker:
    """Rolling per-vehicle windows feeding both prediction and the pools."""

    def __init__(self, d_risk: SequenceBuffer, d_safe: SequenceBuffer):
        if d_risk.label != LABEL_COLLISION or d_safe.label != LABEL_SAFE:
            raise ValueError("pools wired to the wrong labels")
        self.d_risk = d_risk
        self.d_safe = d_safe
        self._windows: dict[int, deque] = {}

    def append(self, vid: int, obs: np.ndarray, action_raw: float) -> np.ndarray:
        """Record one step; returns the padded window including this step."""
        win = self._windows.get(vid)
        if win is None:
            win = deque(maxlen=N_WINDOW)
            self._windows[vid] = win
        row = np.concatenate([np.asarray(obs, dtype=np.float64), [float(action_raw)]])
        if row.shape != (INPUT_DIM,):
            raise ValueError(f"window row must have {INPUT_DIM} entries")
        win.append(row)
        return pad_window(list(win))

    def current(self, vid: int) -> np.ndarray | None:
        win = self._windows.get(vid)
        if not win:
            return None
        return pad_window(list(win))

    def snapshot(self, vid: int) -> StateActionSequence | None:
        """Unlabeled copy of a live window (used for holdout export)."""
        win = self._windows.get(vid)
        if not win:
            return None
        return StateActionSequence(pad_window(list(win)), len(win), None)

    def discard(self, vid: int):
        """Drop a live window unlabeled (unresolved at rollout end)."""
        self._windows.pop(vid, None)

    def finalize(self, vid: int, cause: str) -> int:
        """Resolve a trajectory: store its final window, or discard.

        Only the last N steps are kept, so the stored sequence is the
        window as it stood at termination.  Returns 1 if a sequence was
        stored, 0 otherwise (truncation, or a vehicle that never stepped).
        """
        win = self._windows.pop(vid, None)
        if cause == "truncated":
            return 0
        if cause == "collision":
            pool, label = self.d_risk, LABEL_COLLISION
        elif cause == "arrived":
            pool, label = self.d_safe, LABEL_SAFE
        else:
            raise ValueError(f"unknown trajectory outcome: {cause}")
        if not win:
            return 0
        pool.push(StateActionSequence(pad_window(list(win)), len(win), label))
        return 1

    def live_vehicles(self) -> list[int]:
        return sorted(self._windows)


def balanced_sample(
    d_risk: SequenceBuffer, d_safe: SequenceBuffer, batch: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray] | None:
    """Half-and-half batch from the two pools, or None if either is empty.

    Draws with replacement, so small pools still fill their half.
    """
    if batch % 2 != 0:
        raise ValueError("batch size must be even")
    if len(d_risk) == 0 or len(d_safe) == 0:
        return None
    half = batch // 2
    rows = d_risk.sample(half) + d_safe.sample(half)
    order = rng.permutation(batch)
    x = np.stack([rows[i].x for i in order])
    y = np.array([rows[i].label for i in order], dtype=np.float64)
    return x, y
