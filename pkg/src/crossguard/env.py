"""Agent-facing MDP around the intersection world.

Builds the 98-entry normalized observation, scales raw policy actions to
accelerations, computes the per-step reward pieces (efficiency by direction
waiting rank, conflict-signed safety term, risk penalty slot), and tracks a
sub-episode per controlled vehicle from zone entry to interior exit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import NUM_MOVEMENTS, IntersectionGeometry
from .world import CONTROL_ACCEL_MAX, D_COL, V_MAX, World

OBS_DIM = 98
T_MAX = 300.0  # waiting-time normalizer, seconds
Q_MAX = 20.0  # queue normalizer, vehicles per approach lane
LAMBDA_EFF = 1.0
LAMBDA_RISK = 3.0
LAMBDA_SAFE = 10.0
CONFLICT_RADIUS = 2.0 * D_COL
RANK_MEAN = (NUM_MOVEMENTS + 1) / 2.0  # = 4.5, mean of a full rank permutation

CAUSE_NONE = "none"
CAUSE_COLLISION = "collision"
CAUSE_ARRIVED = "arrived"
CAUSE_TRUNCATED = "truncated"


@dataclass
class RewardBreakdown:
    r_eff: float
    r_safe: float
    r_risk_term: float
    total: float


@dataclass
class StepOutcome:
    vehicle_id: int
    obs: np.ndarray
    action_raw: float
    r_eff: float
    r_safe: float
    in_conflict: bool
    next_obs: np.ndarray
    done: bool
    cause: str
    breakdown: RewardBreakdown | None = None


def scale_action(raw: float) -> float:
    """Map a raw policy output in [-1, 1] onto acceleration in m/s^2."""
    raw = min(max(float(raw), -1.0), 1.0)
    return CONTROL_ACCEL_MAX * raw


def direction_ranks(u_s: np.ndarray) -> np.ndarray:
    """Rank 1..8 per direction by accumulated waiting; 8 = longest wait.

    Ties broken by direction index (earlier index ranks lower).
    """
    order = sorted(range(NUM_MOVEMENTS), key=lambda i: (u_s[i], i))
    ranks = np.empty(NUM_MOVEMENTS)
    for pos, idx in enumerate(order):
        ranks[idx] = pos + 1
    return ranks


def efficiency_reward(rank: float, acc: float) -> float:
    """(rank - mean rank) * (acc / acc_max): accelerating out of a
    long-waited direction pays, accelerating in a short-waited one costs."""
    return (rank - RANK_MEAN) * (acc / CONTROL_ACCEL_MAX)


def safety_reward(in_conflict: bool, acc: float) -> float:
    """Acceleration-proportional term, sign flipped inside a conflict."""
    scaled = acc / CONTROL_ACCEL_MAX
    return -scaled if in_conflict else scaled


def total_reward(
    r_eff: float,
    r_safe: float,
    risk: float,
    w_eff: float = LAMBDA_EFF,
    w_risk: float = LAMBDA_RISK,
    w_safe: float = LAMBDA_SAFE,
) -> RewardBreakdown:
    """Weighted sum; predicted risk enters as a penalty."""
    r_risk_term = -float(risk)
    total = w_eff * r_eff + w_risk * r_risk_term + w_safe * r_safe
    return RewardBreakdown(r_eff, r_safe, r_risk_term, total)


def build_observation(world: World, vehicle_id: int) -> np.ndarray:
    """98-entry vector: [d_inter, v_control, U_S(8), U_Q(8), U_G(80)]."""
    veh = world.vehicles[vehicle_id]
    d_inter = min(max(world.dist_to_stop_line(veh) / world.geometry.control_zone_length, 0.0), 1.0)
    v_control = min(max(veh.v / V_MAX, 0.0), 1.0)
    u_s = np.clip(world.u_s / T_MAX, 0.0, 1.0)
    u_q = np.clip(world.u_q / Q_MAX, 0.0, 1.0)
    u_g = world.occupancy_grid()
    obs = np.concatenate(([d_inter, v_control], u_s, u_q, u_g))
    assert obs.shape == (OBS_DIM,)
    return obs


@dataclass
class _Episode:
    steps: int = 0
    pending_obs: np.ndarray | None = None


class IntersectionEnv:
    """Couples the world with per-vehicle episode bookkeeping."""

    def __init__(
        self,
        seed: int = 0,
        dt: float = 0.5,
        demand: float = 0.03,
        training_mode: bool = False,
        truncation_steps: int = 1000,
        geometry: IntersectionGeometry | None = None,
    ):
        self.seed = seed
        self.dt = dt
        self.demand = demand
        self.training_mode = training_mode
        self.truncation_steps = truncation_steps
        self.geometry = geometry if geometry is not None else IntersectionGeometry()
        self.world: World = None  # type: ignore[assignment]
        self.episodes: dict[int, _Episode] = {}
        self.reset(seed)

    def reset(self, seed: int | None = None) -> None:
        if seed is not None:
            self.seed = seed
        self.world = World(
            geometry=self.geometry,
            dt=self.dt,
            seed=self.seed,
            demand=self.demand,
            training_mode=self.training_mode,
            control_enabled=True,
        )
        self.episodes = {}

    def observe_all(self) -> dict[int, np.ndarray]:
        """Current observation per controlled vehicle; cached for env_step."""
        out = {}
        for veh in self.world.controlled_vehicles():
            ep = self.episodes.setdefault(veh.id, _Episode())
            obs = build_observation(self.world, veh.id)
            ep.pending_obs = obs
            out[veh.id] = obs
        return out

    def env_step(self, actions_raw: dict[int, float]) -> list[StepOutcome]:
        """Advance one step under raw [-1,1] actions, one per controlled vehicle."""
        world = self.world
        controlled_ids = [v.id for v in world.controlled_vehicles()]
        missing = set(controlled_ids) - set(actions_raw)
        if missing:
            raise ValueError(f"missing actions for controlled vehicles: {sorted(missing)}")

        ranks = direction_ranks(world.u_s)
        pre_obs: dict[int, np.ndarray] = {}
        movements: dict[int, int] = {}
        for vid in controlled_ids:
            ep = self.episodes.setdefault(vid, _Episode())
            if ep.pending_obs is None:
                ep.pending_obs = build_observation(world, vid)
            pre_obs[vid] = ep.pending_obs
            movements[vid] = world.vehicles[vid].movement

        commands = {vid: scale_action(actions_raw[vid]) for vid in controlled_ids}
        world.spawn()
        events = world.step(commands)

        flags = events.conflict_flags
        collided = {vid for ev in events.collisions for vid in ev.vehicle_ids}
        released = set(events.control_released)

        outcomes = []
        for vid in controlled_ids:
            ep = self.episodes[vid]
            ep.steps += 1
            ep.pending_obs = None
            acc = commands[vid]
            raw = min(max(float(actions_raw[vid]), -1.0), 1.0)
            in_conflict = flags.get(vid, False)
            r_eff = efficiency_reward(ranks[movements[vid]], acc)
            r_safe = safety_reward(in_conflict, acc)

            if vid in collided:
                cause = CAUSE_COLLISION
            elif vid in released:
                cause = CAUSE_ARRIVED
            elif ep.steps >= self.truncation_steps:
                cause = CAUSE_TRUNCATED
            else:
                cause = CAUSE_NONE

            if vid in world.vehicles:
                next_obs = build_observation(world, vid)
            else:
                next_obs = np.zeros(OBS_DIM)

            done = cause != CAUSE_NONE
            outcomes.append(
                StepOutcome(
                    vehicle_id=vid,
                    obs=pre_obs[vid],
                    action_raw=raw,
                    r_eff=r_eff,
                    r_safe=r_safe,
                    in_conflict=in_conflict,
                    next_obs=next_obs,
                    done=done,
                    cause=cause,
                )
            )
            if done:
                del self.episodes[vid]

        # vehicles promoted into the zone this step get fresh episodes
        for veh in world.controlled_vehicles():
            self.episodes.setdefault(veh.id, _Episode())
        return outcomes
