import numpy as np
import pytest

from crossguard.env import (
    CAUSE_ARRIVED,
    CAUSE_COLLISION,
    OBS_DIM,
    IntersectionEnv,
    build_observation,
    direction_ranks,
    efficiency_reward,
    safety_reward,
    scale_action,
    total_reward,
)
from crossguard.geometry import MOVEMENT_INDEX, Movement
from crossguard.world import Vehicle, World

E_GS = MOVEMENT_INDEX[Movement("E", "GS")]
N_GS = MOVEMENT_INDEX[Movement("N", "GS")]


def put(world, vid, movement, s, v, controlled=False):
    veh = Vehicle(id=vid, movement=movement, s=s, v=v, controlled=controlled)
    world.vehicles[vid] = veh
    world._next_id = max(world._next_id, vid + 1)
    return veh


def test_scale_action_endpoints():
    assert scale_action(0.0) == 0.0
    assert scale_action(1.0) == 3.0
    assert scale_action(-1.0) == -3.0
    assert scale_action(2.5) == 3.0  # clamped first


def test_direction_ranks_orders_by_wait():
    u_s = np.array([0.0, 50.0, 10.0, 0.0, 300.0, 5.0, 0.0, 20.0])
    ranks = direction_ranks(u_s)
    assert ranks[4] == 8  # longest wait
    assert sorted(ranks) == list(range(1, 9))
    # ties at zero wait broken by direction index
    assert ranks[0] == 1 and ranks[3] == 2 and ranks[6] == 3


def test_efficiency_reward_examples():
    assert efficiency_reward(8, 3.0) == pytest.approx(3.5, abs=1e-12)
    assert efficiency_reward(1, 3.0) == pytest.approx(-3.5, abs=1e-12)
    assert efficiency_reward(5, 0.0) == 0.0


def test_efficiency_reward_sums_to_zero_over_directions():
    u_s = np.array([3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0])
    ranks = direction_ranks(u_s)
    total = sum(efficiency_reward(ranks[i], 2.0) for i in range(8))
    assert total == pytest.approx(0.0, abs=1e-12)


def test_safety_reward_examples_and_oddness():
    assert safety_reward(True, 3.0) == pytest.approx(-1.0, abs=1e-12)
    assert safety_reward(False, 3.0) == pytest.approx(1.0, abs=1e-12)
    assert safety_reward(True, 0.0) == 0.0
    for flag in (True, False):
        for acc in (-3.0, -1.2, 0.7, 3.0):
            assert safety_reward(flag, acc) == pytest.approx(
                -safety_reward(flag, -acc), abs=1e-12
            )


def test_total_reward_composition():
    bd = total_reward(r_eff=3.5, r_safe=1.0, risk=0.5)
    assert bd.total == pytest.approx(12.0, abs=1e-12)
    bd = total_reward(r_eff=0.0, r_safe=-1.0, risk=1.0)
    assert bd.total == pytest.approx(-13.0, abs=1e-12)
    bd = total_reward(0.0, 0.0, 0.0)
    assert bd.total == 0.0


def test_total_reward_recomposes_from_breakdown():
    rng = np.random.default_rng(0)
    for _ in range(100):
        bd = total_reward(rng.normal(), rng.normal(), rng.random())
        assert bd.total == pytest.approx(
            1.0 * bd.r_eff + 3.0 * bd.r_risk_term + 10.0 * bd.r_safe, abs=1e-12
        )


def test_observation_shape_bounds_and_endpoints():
    w = World(seed=0, demand=0.0)
    put(w, 0, E_GS, s=w.stop_line(), v=0.0, controlled=True)
    obs = build_observation(w, 0)
    assert obs.shape == (OBS_DIM,)
    assert obs[0] == 0.0  # at the stop line
    put(w, 1, E_GS, s=w.zone_start(), v=10.0, controlled=True)
    obs = build_observation(w, 1)
    assert obs[0] == 1.0 and obs[1] == 1.0


def test_observation_wait_normalization():
    w = World(seed=0, demand=0.0)
    veh = put(w, 0, E_GS, s=w.stop_line() - 5.0, v=0.0, controlled=True)
    veh.wait_clock = 150.0
    w._refresh_direction_accumulators()
    obs = build_observation(w, 0)
    assert obs[2 + E_GS] == pytest.approx(0.5)


def test_observation_unknown_vehicle_raises():
    w = World(seed=0, demand=0.0)
    with pytest.raises(KeyError):
        build_observation(w, 404)


def test_observation_in_bounds_under_traffic():
    env = IntersectionEnv(seed=21, demand=0.06, training_mode=False)
    rng = np.random.default_rng(4)
    for _ in range(800):
        obs = env.observe_all()
        for vec in obs.values():
            assert np.all(vec >= 0.0) and np.all(vec <= 1.0)
        env.env_step({vid: rng.uniform(-1, 1) for vid in obs})


def test_env_step_requires_all_actions():
    env = IntersectionEnv(seed=3, demand=0.3)
    found = False
    for _ in range(200):
        obs = env.observe_all()
        if obs:
            found = True
            with pytest.raises(ValueError):
                env.env_step({})
            break
        env.env_step({})
    assert found


def test_episode_opens_on_zone_entry_and_arrives():
    env = IntersectionEnv(seed=0, demand=0.0)
    w = env.world
    put(w, 0, E_GS, s=w.zone_start() - 0.5, v=8.0)
    outcomes = env.env_step({})
    assert w.vehicles[0].controlled
    assert 0 in env.episodes
    causes = []
    for _ in range(40):
        obs = env.observe_all()
        outcomes = env.env_step({vid: 1.0 for vid in obs})
        causes.extend((o.vehicle_id, o.cause, o.done) for o in outcomes if o.done)
        if causes:
            break
    assert causes == [(0, CAUSE_ARRIVED, True)]


def test_collision_terminates_both_episodes():
    env = IntersectionEnv(seed=0, demand=0.0, training_mode=True)
    w = env.world
    pts = w.geometry.conflicts_between(E_GS, N_GS)
    ca, cb = pts[0]
    put(w, 0, E_GS, s=w.stop_line() + ca - 4.0, v=8.0, controlled=True)
    put(w, 1, N_GS, s=w.stop_line() + cb - 4.0, v=8.0, controlled=True)
    env.observe_all()
    outcomes = env.env_step({0: 0.0, 1: 0.0})
    assert {o.cause for o in outcomes} == {CAUSE_COLLISION}
    assert all(o.done for o in outcomes)
    assert all(o.in_conflict for o in outcomes)
    assert env.episodes == {}


def test_conflict_flag_interior_only_and_no_collision():
    env = IntersectionEnv(seed=0, demand=0.0)
    w = env.world
    pts = w.geometry.conflicts_between(E_GS, N_GS)
    ca, cb = pts[0]
    # vehicle 0 parked mid-interior inside the doubled window; vehicle 1
    # still before its stop line but within the partner window. Only the
    # interior vehicle carries the flag, and nobody is within d_col.
    put(w, 0, E_GS, s=w.stop_line() + ca - 3.0, v=0.0, controlled=True)
    put(w, 1, N_GS, s=w.stop_line() + cb - 3.0, v=0.0, controlled=True)
    env.observe_all()
    outcomes = env.env_step({0: 0.0, 1: 0.0})
    by_id = {o.vehicle_id: o for o in outcomes}
    assert by_id[0].in_conflict
    assert not by_id[1].in_conflict
    assert all(not o.done for o in outcomes)
    assert by_id[0].r_safe == 0.0  # zero acceleration
    outcomes = env.env_step({vid: 1.0 for vid in env.observe_all()})
    by_id = {o.vehicle_id: o for o in outcomes}
    assert by_id[0].r_safe < 0.0  # accelerating inside a conflict window


def test_reward_fields_match_manual_computation():
    env = IntersectionEnv(seed=0, demand=0.0)
    w = env.world
    put(w, 0, E_GS, s=w.stop_line() - 10.0, v=5.0, controlled=True)
    env.observe_all()
    ranks = direction_ranks(w.u_s)
    outcomes = env.env_step({0: 1.0})
    o = outcomes[0]
    assert o.r_eff == pytest.approx(efficiency_reward(ranks[E_GS], 3.0), abs=1e-12)
    assert o.r_safe == pytest.approx(1.0, abs=1e-12)  # free road, full accel


def test_truncation_closes_episode_without_removal():
    env = IntersectionEnv(seed=0, demand=0.0, truncation_steps=3)
    w = env.world
    put(w, 0, E_GS, s=w.stop_line() - 20.0, v=0.0, controlled=True)
    env.episodes.clear()
    done = []
    for _ in range(3):
        obs = env.observe_all()
        outcomes = env.env_step({vid: -1.0 for vid in obs})
        done.extend(o for o in outcomes if o.done)
    assert len(done) == 1
    assert done[0].cause == "truncated"
    assert 0 in w.vehicles  # still driving, episode bookkeeping reset
