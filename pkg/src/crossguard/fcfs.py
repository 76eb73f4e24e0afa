"""First-come-first-served baseline controller.

Vehicles receive a timestamp when promoted to control.  The earliest stamped
contender at the stop line whose conflict window is clear gets the crossing
grant and accelerates through on plain car-following; everyone else brakes to
stop at the line.  The grant is exclusive and persists until the holder has
fully traversed the interior, so two conflicting movements never proceed at
once.  Simultaneous arrivals are ordered by a seeded random draw made at
stamping time.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .idm import brake_to_point, idm_acceleration
from .world import CONTENDER_RADIUS, Vehicle, World

STOP_MARGIN = 0.5  # brake target sits just short of the line


@dataclass
class FcfsState:
    seed: int = 0
    order: dict[int, tuple] = field(default_factory=dict)
    holder: int | None = None
    rng: np.random.Generator = None

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)

    def stamp(self, vid: int, time: float):
        if vid not in self.order:
            self.order[vid] = (time, float(self.rng.uniform()), vid)


def _window_clear(world: World, veh: Vehicle) -> bool:
    for other in world.vehicles.values():
        if other.id == veh.id:
            continue
        if not world.geometry.conflicts_between(veh.movement, other.movement):
            continue
        if world.in_interior(other):
            return False
    return True


def _follow_accel(world: World, veh: Vehicle) -> float:
    lead = world.leader_of(veh)
    if lead is None:
        return idm_acceleration(veh.v)
    return idm_acceleration(veh.v, lead.v, lead.s - veh.s - lead.length)


def fcfs_decide(world: World, state: FcfsState) -> dict[int, float]:
    """Acceleration command per controlled vehicle for the current step."""
    controlled = world.controlled_vehicles()
    for veh in controlled:
        state.stamp(veh.id, world.time)
    for vid in list(state.order):
        if vid not in world.vehicles:
            state.order.pop(vid)

    if state.holder is not None:
        holder_veh = world.vehicles.get(state.holder)
        if holder_veh is None or holder_veh.s >= world.geometry.interior_end(
            holder_veh.movement
        ):
            state.holder = None  # crossed or removed; free the box

    if state.holder is None:
        contenders = [
            v
            for v in controlled
            if not world.in_interior(v) and 0.0 <= world.dist_to_stop_line(v) <= CONTENDER_RADIUS
        ]
        for veh in sorted(contenders, key=lambda v: state.order[v.id]):
            if _window_clear(world, veh):
                state.holder = veh.id
                break

    commands: dict[int, float] = {}
    for veh in controlled:
        if veh.id == state.holder or world.in_interior(veh):
            commands[veh.id] = _follow_accel(world, veh)
        else:
            gap_to_line = world.dist_to_stop_line(veh) - STOP_MARGIN
            commands[veh.id] = min(
                _follow_accel(world, veh), brake_to_point(veh.v, gap_to_line)
            )
    return commands
