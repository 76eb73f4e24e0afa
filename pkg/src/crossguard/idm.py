"""Intelligent Driver Model acceleration for background traffic."""
from __future__ import annotations

import math

MAX_ACCEL = 3.0  # m/s^2
MIN_ACCEL = -5.0  # m/s^2, physical braking floor
DESIRED_SPEED = 10.0  # m/s
TIME_HEADWAY = 1.5  # s
MIN_GAP = 10.0  # m, standstill spacing
COMFORT_DECEL = 3.0  # m/s^2
EXPONENT = 4.0


def idm_acceleration(
    v: float,
    v_lead: float | None = None,
    gap: float = math.inf,
    v0: float = DESIRED_SPEED,
    a_max: float = MAX_ACCEL,
    b: float = COMFORT_DECEL,
    s0: float = MIN_GAP,
    t_headway: float = TIME_HEADWAY,
    delta: float = EXPONENT,
) -> float:
    """Longitudinal acceleration of a follower, clamped to [MIN_ACCEL, a_max].

    With no leader (v_lead is None) the interaction term vanishes and the
    model relaxes toward the desired speed v0.
    """
    if v < 0.0:
        raise ValueError(f"speed must be nonnegative, got {v}")
    free = 1.0 - (v / v0) ** delta
    if v_lead is None:
        a = a_max * free
    else:
        if gap <= 0.0:
            raise ValueError(f"follower overlaps leader (gap={gap})")
        dv = v - v_lead
        s_star = s0 + v * t_headway + v * dv / (2.0 * math.sqrt(a_max * b))
        s_star = max(s_star, 0.0)
        a = a_max * (free - (s_star / gap) ** 2)
    return min(max(a, MIN_ACCEL), a_max)


def brake_to_point(v: float, dist: float, floor: float = MIN_ACCEL) -> float:
    """Constant deceleration that stops the vehicle at ``dist`` meters ahead.

    Used for yield-to-stop-line behavior; returns 0 when already stopped and
    saturates at ``floor`` when the distance is too short.
    """
    if v <= 0.0:
        return 0.0
    if dist <= 1e-6:
        return floor
    return max(-(v * v) / (2.0 * dist), floor)
