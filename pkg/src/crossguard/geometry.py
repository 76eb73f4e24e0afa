"""Intersection layout: movements, interior paths, and conflict points.

The junction is a symmetric four-way crossing with two dedicated approach
lanes per arm (left-turn and straight; right turns are not modeled).  Every
movement owns a fixed route: approach lane -> interior path -> exit lane.
Interior paths are polylines (straight segment or quarter arc) in a shared
2-D frame, from which pairwise conflict points are precomputed once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

APPROACHES = ("E", "W", "N", "S")
MANEUVERS = ("GL", "GS")  # left turn, straight


class Movement(NamedTuple):
    approach: str
    maneuver: str

    @property
    def label(self) -> str:
        return f"{self.approach}-{self.maneuver}"


MOVEMENTS: tuple[Movement, ...] = tuple(
    Movement(a, m) for a in APPROACHES for m in MANEUVERS
)
MOVEMENT_INDEX = {mv: i for i, mv in enumerate(MOVEMENTS)}
NUM_MOVEMENTS = len(MOVEMENTS)

# Unit heading of travel at the stop line, per approach.
_HEADING = {"E": (-1.0, 0.0), "W": (1.0, 0.0), "N": (0.0, -1.0), "S": (0.0, 1.0)}


def _rot_cw(v):
    return (v[1], -v[0])


def _rot_ccw(v):
    return (-v[1], v[0])


def _polyline_length(points: np.ndarray) -> float:
    return float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))


def _segment_intersection(p, p2, q, q2):
    """Parametric intersection of segments p->p2 and q->q2, or None."""
    r = p2 - p
    s = q2 - q
    denom = r[0] * s[1] - r[1] * s[0]
    if abs(denom) < 1e-12:
        return None
    d = q - p
    t = (d[0] * s[1] - d[1] * s[0]) / denom
    u = (d[0] * r[1] - d[1] * r[0]) / denom
    if -1e-9 <= t <= 1 + 1e-9 and -1e-9 <= u <= 1 + 1e-9:
        return t, u
    return None


@dataclass
class ConflictPoint:
    movement_a: int
    movement_b: int
    pos_a: float  # arc position along movement_a's interior path, meters
    pos_b: float


@dataclass
class IntersectionGeometry:
    """Fixed layout shared by every world instance.

    Positions along a route are measured from the spawn point; the stop line
    sits at ``approach_length`` and the interior spans ``interior_length``
    meters beyond it (per movement, since arcs and straights differ).
    """

    lane_width: float = 3.5
    approach_length: float = 100.0
    exit_length: float = 30.0
    control_zone_length: float = 30.0
    blocks_per_path: int = 10

    box_half: float = field(init=False)
    paths: dict[int, np.ndarray] = field(init=False, default_factory=dict)
    interior_length: dict[int, float] = field(init=False, default_factory=dict)
    conflicts: list[ConflictPoint] = field(init=False, default_factory=list)
    _conflict_map: dict[tuple[int, int], list[tuple[float, float]]] = field(
        init=False, default_factory=dict
    )

    def __post_init__(self):
        self.box_half = 2.0 * self.lane_width
        for idx, mv in enumerate(MOVEMENTS):
            self.paths[idx] = self._build_path(mv)
            self.interior_length[idx] = _polyline_length(self.paths[idx])
        self._find_conflicts()

    # -- path construction -------------------------------------------------

    def _lane_entry(self, approach: str, offset: float) -> np.ndarray:
        h = _HEADING[approach]
        r = _rot_cw(h)
        return np.array(
            [-h[0] * self.box_half + r[0] * offset, -h[1] * self.box_half + r[1] * offset]
        )

    def _build_path(self, mv: Movement, arc_segments: int = 64) -> np.ndarray:
        h = np.array(_HEADING[mv.approach])
        inner = 0.5 * self.lane_width
        outer = 1.5 * self.lane_width
        if mv.maneuver == "GS":
            entry = self._lane_entry(mv.approach, outer)
            exit_pt = entry + h * (2.0 * self.box_half)
            return np.stack([entry, exit_pt])
        # Left turn: quarter arc from the inner lane onto the inner exit lane,
        # centered on the box corner to the vehicle's left.
        entry = self._lane_entry(mv.approach, inner)
        left = np.array(_rot_ccw(h))
        radius = self.box_half + inner
        center = entry + left * radius
        theta0 = np.arctan2(entry[1] - center[1], entry[0] - center[0])
        thetas = theta0 + np.linspace(0.0, np.pi / 2.0, arc_segments + 1)
        return center + radius * np.stack([np.cos(thetas), np.sin(thetas)], axis=1)

    # -- conflict table -----------------------------------------------------

    def _find_conflicts(self):
        for i in range(NUM_MOVEMENTS):
            for j in range(i + 1, NUM_MOVEMENTS):
                if MOVEMENTS[i].approach == MOVEMENTS[j].approach:
                    continue  # parallel lanes from one arm cannot meet
                pts = self._cross_points(self.paths[i], self.paths[j])
                if pts:
                    self._conflict_map[(i, j)] = pts
                    for pa, pb in pts:
                        self.conflicts.append(ConflictPoint(i, j, pa, pb))

    @staticmethod
    def _cross_points(path_a, path_b) -> list[tuple[float, float]]:
        out = []
        acc_a = 0.0
        for ia in range(len(path_a) - 1):
            pa, pa2 = path_a[ia], path_a[ia + 1]
            len_a = float(np.linalg.norm(pa2 - pa))
            acc_b = 0.0
            for ib in range(len(path_b) - 1):
                pb, pb2 = path_b[ib], path_b[ib + 1]
                len_b = float(np.linalg.norm(pb2 - pb))
                hit = _segment_intersection(pa, pa2, pb, pb2)
                if hit is not None:
                    out.append((acc_a + hit[0] * len_a, acc_b + hit[1] * len_b))
                acc_b += len_b
            acc_a += len_a
        # merge duplicates from shared polyline vertices
        merged: list[tuple[float, float]] = []
        for pa, pb in out:
            if not any(abs(pa - qa) < 1e-6 and abs(pb - qb) < 1e-6 for qa, qb in merged):
                merged.append((pa, pb))
        return merged

    # -- queries ------------------------------------------------------------

    def conflicts_between(self, a: int, b: int) -> list[tuple[float, float]]:
        """Conflict arc positions as (pos_on_a, pos_on_b); symmetric."""
        if a == b:
            return []
        key = (a, b) if a < b else (b, a)
        pts = self._conflict_map.get(key, [])
        if a < b:
            return list(pts)
        return [(pb, pa) for pa, pb in pts]

    def conflicting_movements(self, m: int) -> list[int]:
        out = set()
        for (a, b) in self._conflict_map:
            if a == m:
                out.add(b)
            elif b == m:
                out.add(a)
        return sorted(out)

    def stop_line(self) -> float:
        return self.approach_length

    def interior_end(self, movement: int) -> float:
        return self.approach_length + self.interior_length[movement]

    def route_length(self, movement: int) -> float:
        return self.interior_end(movement) + self.exit_length

    def block_of(self, movement: int, interior_pos: float) -> int:
        """Block index of a front bumper at ``interior_pos`` on the interior.

        Boundaries belong to the block the front bumper enters.
        """
        block_len = self.interior_length[movement] / self.blocks_per_path
        idx = int(interior_pos / block_len)
        return min(max(idx, 0), self.blocks_per_path - 1)
