"""Discrete-time microscopic simulator of one unsignalized intersection.

Vehicles travel fixed routes (approach lane, interior path, exit lane) as
point masses with longitudinal kinematics only.  Background vehicles follow
the IDM toward their same-movement leader and negotiate interior entry
through a first-come serialization gate; controlled vehicles apply external
acceleration commands.  The world is deterministic given its seed and the
command stream.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np

from .geometry import NUM_MOVEMENTS, MOVEMENTS, IntersectionGeometry
from .idm import DESIRED_SPEED, MIN_GAP, brake_to_point, idm_acceleration

logger = logging.getLogger(__name__)

V_MAX = DESIRED_SPEED  # 10 m/s speed limit
V_WAIT = 0.3  # below this a vehicle accumulates waiting time
V_STALL = 0.1  # training-only stall threshold inside the interior
CONTROL_ACCEL_MIN = -3.0
CONTROL_ACCEL_MAX = 3.0
VEHICLE_LENGTH = 5.0
D_COL = 2.0  # collision radius around a conflict point, meters
SPAWN_SPEED = 8.0
SPAWN_HEADWAY = VEHICLE_LENGTH + MIN_GAP
CONTENDER_RADIUS = 5.0  # stop-line proximity that makes a vehicle a contender


@dataclass
class Vehicle:
    id: int
    movement: int  # index into geometry.MOVEMENTS
    s: float  # front-bumper route position, meters from spawn
    v: float
    a: float = 0.0
    length: float = VEHICLE_LENGTH
    controlled: bool = False
    wait_clock: float = 0.0
    spawn_time: float = 0.0
    zone_entry_time: float | None = None
    s_prev: float = 0.0

    def __post_init__(self):
        self.s_prev = self.s


@dataclass
class CollisionEvent:
    time: float
    kind: str  # "crossing", "rear_end", or "stall"
    vehicle_ids: tuple[int, ...]
    movement_labels: tuple[str, ...]


@dataclass
class StepEvents:
    """What happened during one world step, for logs and metrics."""

    spawned: list[int] = field(default_factory=list)
    arrived: list[Vehicle] = field(default_factory=list)
    collisions: list[CollisionEvent] = field(default_factory=list)
    removed_in_collision: list[int] = field(default_factory=list)
    control_released: list[int] = field(default_factory=list)
    conflict_flags: dict[int, bool] = field(default_factory=dict)


def _window_crossing(p_prev: float, p_now: float, center: float, radius: float):
    """Fraction-of-step interval during which a linearly moving point sits
    within ``radius`` of ``center``, or None if it never does."""
    lo, hi = center - radius, center + radius
    d = p_now - p_prev
    if abs(d) < 1e-12:
        return (0.0, 1.0) if lo <= p_prev <= hi else None
    t0 = (lo - p_prev) / d
    t1 = (hi - p_prev) / d
    if t0 > t1:
        t0, t1 = t1, t0
    t0, t1 = max(t0, 0.0), min(t1, 1.0)
    return (t0, t1) if t0 <= t1 else None


class World:
    """Mutable simulator state plus the step/spawn/measure operations."""

    def __init__(
        self,
        geometry: IntersectionGeometry | None = None,
        dt: float = 0.5,
        seed: int = 0,
        demand: float | Iterable[float] = 0.0,
        training_mode: bool = False,
        control_enabled: bool = True,
    ):
        self.geometry = geometry if geometry is not None else IntersectionGeometry()
        self.dt = dt
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        if np.isscalar(demand):
            self.demand = np.full(NUM_MOVEMENTS, float(demand))
        else:
            self.demand = np.asarray(list(demand), dtype=float)
            if self.demand.shape != (NUM_MOVEMENTS,):
                raise ValueError("demand must be scalar or one rate per movement")
        self.training_mode = training_mode
        self.control_enabled = control_enabled

        self.time = 0.0
        self.step_count = 0
        self.vehicles: dict[int, Vehicle] = {}
        self._next_id = 0
        self.u_s = np.zeros(NUM_MOVEMENTS)
        self.u_q = np.zeros(NUM_MOVEMENTS, dtype=int)
        self.throughput = 0
        self.completed_waits: list[float] = []
        self.collision_count = 0
        self.last_events = StepEvents()
        self._gate_holder: int | None = None
        self._pending_spawns: list[int] = []
        self._log_stream: IO[str] | None = None

    # -- bookkeeping helpers --------------------------------------------------

    def attach_logger(self, stream: IO[str]):
        """Write one JSONL row per vehicle per step to ``stream``."""
        self._log_stream = stream

    def stop_line(self) -> float:
        return self.geometry.stop_line()

    def zone_start(self) -> float:
        return self.geometry.stop_line() - self.geometry.control_zone_length

    def zone_of(self, veh: Vehicle) -> str:
        if veh.s < self.zone_start():
            return "approach"
        if veh.s < self.stop_line():
            return "zone"
        if veh.s < self.geometry.interior_end(veh.movement):
            return "interior"
        return "exit"

    def in_interior(self, veh: Vehicle) -> bool:
        return self.stop_line() <= veh.s < self.geometry.interior_end(veh.movement)

    def interior_pos(self, veh: Vehicle) -> float:
        return veh.s - self.stop_line()

    def dist_to_stop_line(self, veh: Vehicle) -> float:
        return self.stop_line() - veh.s

    def by_movement(self, movement: int) -> list[Vehicle]:
        out = [v for v in self.vehicles.values() if v.movement == movement]
        out.sort(key=lambda v: v.s)
        return out

    def leader_of(self, veh: Vehicle) -> Vehicle | None:
        best = None
        for other in self.vehicles.values():
            if other.movement != veh.movement or other.id == veh.id:
                continue
            if other.s > veh.s and (best is None or other.s < best.s):
                best = other
        return best

    def controlled_vehicles(self) -> list[Vehicle]:
        out = [v for v in self.vehicles.values() if v.controlled]
        out.sort(key=lambda v: v.id)
        return out

    # -- spawning -------------------------------------------------------------

    def spawn(self, demand: np.ndarray | None = None, rng: np.random.Generator | None = None):
        """Bernoulli-per-step arrivals, suppressed while the entry is occupied."""
        rates = self.demand if demand is None else np.asarray(demand, dtype=float)
        gen = self.rng if rng is None else rng
        for mv in range(NUM_MOVEMENTS):
            # one draw per movement per step, even when suppressed, so lane
            # occupancy cannot shift the random stream of later movements
            u = gen.random()
            if u >= rates[mv] * self.dt:
                continue
            if any(
                v.movement == mv and v.s < SPAWN_HEADWAY for v in self.vehicles.values()
            ):
                continue
            veh = Vehicle(
                id=self._next_id,
                movement=mv,
                s=0.0,
                v=SPAWN_SPEED,
                spawn_time=self.time,
            )
            self._next_id += 1
            self.vehicles[veh.id] = veh
            self._pending_spawns.append(veh.id)

    # -- interior entry gate for background vehicles ---------------------------

    def _gate_allows(self, veh: Vehicle) -> bool:
        """First-come one-at-a-time interior admission for IDM vehicles."""
        holder = self._gate_holder
        if holder is not None and holder in self.vehicles:
            return holder == veh.id
        contenders = [
            v
            for v in self.vehicles.values()
            if not v.controlled
            and v.zone_entry_time is not None
            and 0.0 <= self.dist_to_stop_line(v) <= CONTENDER_RADIUS
        ]
        if not contenders:
            return False
        winner = min(contenders, key=lambda v: (v.zone_entry_time, v.id))
        self._gate_holder = winner.id
        return winner.id == veh.id

    def _background_accel(self, veh: Vehicle) -> float:
        lead = self.leader_of(veh)
        if lead is None:
            a = idm_acceleration(veh.v)
        else:
            gap = lead.s - lead.length - veh.s
            a = idm_acceleration(veh.v, lead.v, gap)
        d_line = self.dist_to_stop_line(veh)
        if veh.zone_entry_time is not None and d_line > 0.0 and not self._gate_allows(veh):
            a = min(a, brake_to_point(veh.v, max(d_line - 0.5, 0.0)))
        return a

    # -- the step operation -----------------------------------------------------

    def step(self, commands: dict[int, float] | None = None) -> StepEvents:
        """Advance one dt: apply commands/IDM, integrate, account, cull."""
        commands = commands or {}
        events = StepEvents()
        events.spawned = self._pending_spawns
        self._pending_spawns = []

        # the gate holder keeps right-of-way until it clears the interior
        if self._gate_holder is not None:
            holder = self.vehicles.get(self._gate_holder)
            if holder is None or holder.s >= self.geometry.interior_end(holder.movement):
                self._gate_holder = None

        for veh in self.vehicles.values():
            if veh.controlled:
                if veh.id in commands:
                    cmd = float(commands[veh.id])
                    if not math.isfinite(cmd):
                        logger.warning("non-finite command for vehicle %d, coercing to 0", veh.id)
                        cmd = 0.0
                    veh.a = min(max(cmd, CONTROL_ACCEL_MIN), CONTROL_ACCEL_MAX)
                else:
                    veh.a = 0.0
            else:
                if veh.id in commands:
                    logger.warning("command for uncontrolled vehicle %d ignored", veh.id)
                veh.a = self._background_accel(veh)
        unknown = set(commands) - set(self.vehicles)
        if unknown:
            logger.warning("commands for unknown vehicles ignored: %s", sorted(unknown))

        for veh in self.vehicles.values():
            veh.s_prev = veh.s
            veh.v = min(max(veh.v + veh.a * self.dt, 0.0), V_MAX)
            veh.s = veh.s + veh.v * self.dt

        self.time += self.dt
        self.step_count += 1

        zone_start = self.zone_start()
        for veh in self.vehicles.values():
            if veh.zone_entry_time is None and veh.s >= zone_start:
                veh.zone_entry_time = self.time
                if self.control_enabled:
                    veh.controlled = True
            if veh.controlled and veh.s >= self.geometry.interior_end(veh.movement):
                veh.controlled = False
                events.control_released.append(veh.id)
            if veh.v < V_WAIT:
                veh.wait_clock += self.dt

        # conflict flags are taken before any removal so that colliding
        # vehicles still receive their final in-conflict signal
        events.conflict_flags = conflict_flags(self)

        # arrivals: past route end, removed and counted
        done_ids = [
            vid
            for vid, veh in self.vehicles.items()
            if veh.s >= self.geometry.route_length(veh.movement)
        ]
        for vid in done_ids:
            veh = self.vehicles.pop(vid)
            self.throughput += 1
            self.completed_waits.append(veh.wait_clock)
            events.arrived.append(veh)

        # collisions: detect on the swept step, remove participants
        hits = detect_collision(self)
        removed: set[int] = set()
        for ev in hits:
            events.collisions.append(ev)
            self.collision_count += 1
            removed.update(ev.vehicle_ids)
        for vid in removed:
            if vid in self.vehicles:
                del self.vehicles[vid]
                events.removed_in_collision.append(vid)

        self._refresh_direction_accumulators()
        self.last_events = events
        if self._log_stream is not None:
            self._write_log_rows()
        return events

    def _refresh_direction_accumulators(self):
        u_s = np.zeros(NUM_MOVEMENTS)
        u_q = np.zeros(NUM_MOVEMENTS, dtype=int)
        zone_start = self.zone_start()
        stop = self.stop_line()
        for veh in self.vehicles.values():
            if zone_start <= veh.s < stop:
                u_s[veh.movement] += veh.wait_clock
                if veh.v < V_WAIT:
                    u_q[veh.movement] += 1
        self.u_s = u_s
        self.u_q = u_q

    def _write_log_rows(self):
        for veh in sorted(self.vehicles.values(), key=lambda v: v.id):
            row = {
                "t": round(self.time, 6),
                "id": veh.id,
                "movement": MOVEMENTS[veh.movement].label,
                "s": round(veh.s, 4),
                "v": round(veh.v, 4),
                "a": round(veh.a, 4),
                "zone": self.zone_of(veh),
            }
            self._log_stream.write(json.dumps(row) + "\n")

    # -- observations over the interior ----------------------------------------

    def occupancy_grid(self) -> np.ndarray:
        """80 normalized speeds: 8 movement paths x 10 interior blocks."""
        grid = np.zeros((NUM_MOVEMENTS, self.geometry.blocks_per_path))
        front_pos = np.full((NUM_MOVEMENTS, self.geometry.blocks_per_path), -1.0)
        for veh in self.vehicles.values():
            if not self.in_interior(veh):
                continue
            pos = self.interior_pos(veh)
            blk = self.geometry.block_of(veh.movement, pos)
            if pos > front_pos[veh.movement, blk]:
                front_pos[veh.movement, blk] = pos
                grid[veh.movement, blk] = veh.v / V_MAX
        return grid.reshape(-1)

    def state_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.float64(self.time).tobytes())
        h.update(np.int64(self.throughput).tobytes())
        h.update(np.int64(self.collision_count).tobytes())
        for vid in sorted(self.vehicles):
            veh = self.vehicles[vid]
            h.update(np.int64(vid).tobytes())
            h.update(np.int64(veh.movement).tobytes())
            h.update(np.float64([veh.s, veh.v, veh.a, veh.wait_clock]).tobytes())
            h.update(b"1" if veh.controlled else b"0")
        return h.hexdigest()


# -- collision detection (pure query) ------------------------------------------


def conflict_window_overlap(
    world: World, a: Vehicle, b: Vehicle, radius: float = D_COL
) -> bool:
    """True when a and b occupied a shared conflict point's window at the
    same moment during the last step (linear sweep between s_prev and s)."""
    if a.movement == b.movement:
        return False
    pts = world.geometry.conflicts_between(a.movement, b.movement)
    if not pts:
        return False
    stop = world.stop_line()
    pa0, pa1 = a.s_prev - stop, a.s - stop
    pb0, pb1 = b.s_prev - stop, b.s - stop
    for ca, cb in pts:
        wa = _window_crossing(pa0, pa1, ca, radius)
        if wa is None:
            continue
        wb = _window_crossing(pb0, pb1, cb, radius)
        if wb is None:
            continue
        if max(wa[0], wb[0]) <= min(wa[1], wb[1]):
            return True
    return False


def conflict_flags(world: World, radius: float = 2.0 * D_COL) -> dict[int, bool]:
    """Per interior vehicle: is a conflicting-movement vehicle inside the
    shared conflict window right now (swept over the last step)?

    Only vehicles touching the interior get an entry; the partner may sit
    anywhere on its route.
    """
    stop = world.stop_line()
    interior = [
        v
        for v in world.vehicles.values()
        if v.s >= stop and v.s_prev < world.geometry.interior_end(v.movement)
    ]
    flags = {v.id: False for v in interior}
    for a in interior:
        for b in world.vehicles.values():
            if b.id == a.id or b.movement == a.movement:
                continue
            if conflict_window_overlap(world, a, b, radius):
                flags[a.id] = True
                break
    return flags


def detect_collision(world: World) -> list[CollisionEvent]:
    """Crossing-point and rear-end overlaps; stall rule in training mode."""
    out: list[CollisionEvent] = []
    stop = world.stop_line()
    # sweep candidates: anything whose last step touched the interior,
    # including vehicles that crossed out of it during the step
    swept = [
        v
        for v in world.vehicles.values()
        if v.s >= stop and v.s_prev < world.geometry.interior_end(v.movement)
    ]
    swept.sort(key=lambda v: v.id)

    for i in range(len(swept)):
        for j in range(i + 1, len(swept)):
            a, b = swept[i], swept[j]
            if conflict_window_overlap(world, a, b):
                out.append(
                    CollisionEvent(
                        world.time,
                        "crossing",
                        (a.id, b.id),
                        (MOVEMENTS[a.movement].label, MOVEMENTS[b.movement].label),
                    )
                )

    # rear-end: follower's front bumper inside the leader's body, same path
    for mv in range(NUM_MOVEMENTS):
        lane = world.by_movement(mv)
        for k in range(len(lane) - 1):
            follower, lead = lane[k], lane[k + 1]
            if lead.s - follower.s < lead.length:
                out.append(
                    CollisionEvent(
                        world.time,
                        "rear_end",
                        (follower.id, lead.id),
                        (MOVEMENTS[mv].label, MOVEMENTS[mv].label),
                    )
                )

    if world.training_mode:
        flagged = {vid for ev in out for vid in ev.vehicle_ids}
        for veh in swept:
            if veh.id not in flagged and world.in_interior(veh) and veh.v < V_STALL:
                out.append(
                    CollisionEvent(
                        world.time, "stall", (veh.id,), (MOVEMENTS[veh.movement].label,)
                    )
                )
    return out
