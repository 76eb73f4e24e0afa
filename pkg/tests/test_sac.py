import math

import numpy as np
import pytest

from crossguard.autodiff import Tensor
from crossguard.layers import Affine
from crossguard.optim import Adam
from crossguard.sac import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    Actor,
    Critic,
    SacAgent,
    bellman_target,
    soft_update,
    squashed_log_prob,
)
from fdcheck import check_gradients


def _batch(rng, size=32, obs_dim=98):
    return {
        "obs": rng.normal(size=(size, obs_dim)),
        "action": rng.uniform(-1, 1, size=size),
        "reward": rng.normal(size=size),
        "next_obs": rng.normal(size=(size, obs_dim)),
        "done": np.zeros(size),
    }


def _small_agent(seed=0, **kw):
    return SacAgent(obs_dim=6, hidden=16, seed=seed, **kw)


# -- bellman target arithmetic ---------------------------------------------


def test_target_oracle_value():
    y = bellman_target(
        r=np.array(1.0), min_q=np.array(2.0), log_prob=np.array(-1.0),
        done=np.array(0.0), alpha=0.12, gamma=0.99,
    )
    assert abs(float(y) - 3.0988) <= 1e-12


def test_terminal_cuts_bootstrap():
    y = bellman_target(
        r=np.array(-13.0), min_q=np.array(57.0), log_prob=np.array(-3.0),
        done=np.array(1.0), alpha=0.12, gamma=0.99,
    )
    assert float(y) == -13.0


def test_zero_alpha_reduces_to_double_q():
    r, q, lp, d = np.array(0.5), np.array(1.5), np.array(-2.0), np.array(0.0)
    assert float(bellman_target(r, q, lp, d, 0.0, 0.99)) == pytest.approx(
        0.5 + 0.99 * 1.5, abs=1e-12
    )


def test_agent_target_value_ignores_next_state_when_done():
    agent = _small_agent(seed=1)
    rng = np.random.default_rng(0)
    reward = np.array([2.0, -1.0])
    next_obs = rng.normal(size=(2, 6))
    y = agent.target_value(reward, next_obs, np.array([1.0, 1.0]))
    assert np.array_equal(y, reward)


# -- squashed gaussian policy ------------------------------------------------


def test_log_prob_matches_monte_carlo_density():
    mu, sigma = 0.3, 0.5
    u0 = 0.4
    a0 = math.tanh(u0)
    lp = squashed_log_prob(
        Tensor(np.array(mu)), Tensor(np.array(math.log(sigma))), Tensor(np.array(u0))
    ).item()
    rng = np.random.default_rng(123)
    a = np.tanh(mu + sigma * rng.standard_normal(1_000_000))
    width = 0.02
    density = np.mean(np.abs(a - a0) < width / 2.0) / width
    assert abs(math.exp(lp) - density) / density < 0.02


def test_log_prob_matches_closed_form():
    mu, sigma, u0 = -0.2, 0.8, 0.15
    a0 = math.tanh(u0)
    lp = squashed_log_prob(
        Tensor(np.array(mu)), Tensor(np.array(math.log(sigma))), Tensor(np.array(u0))
    ).item()
    gauss = -0.5 * ((u0 - mu) / sigma) ** 2 - math.log(sigma) - 0.5 * math.log(2 * math.pi)
    expect = gauss - math.log(1.0 - a0 * a0)
    assert abs(lp - expect) <= 1e-12


def test_log_prob_gradients():
    rng = np.random.default_rng(4)
    arrays = [rng.normal(size=(3, 1)), rng.uniform(-1, 0.5, size=(3, 1)), rng.normal(size=(3, 1))]
    check_gradients(lambda m, ls, u: squashed_log_prob(m, ls, u).sum(), arrays, tol=1e-4)


def test_sampled_actions_inside_open_interval():
    agent = _small_agent(seed=2)
    rng = np.random.default_rng(1)
    acts = [agent.sample_action(rng.normal(size=6)) for _ in range(200)]
    assert all(-1.0 < a < 1.0 for a in acts)
    scaled = 3.0 * np.array(acts)
    assert np.all((scaled > -3.0) & (scaled < 3.0))


def test_vanishing_std_collapses_to_tanh_mean():
    actor = Actor(obs_dim=4, hidden=8, seed=3)
    actor.log_std_head.weight.data[:] = 0.0
    actor.log_std_head.bias.data[:] = -50.0  # clamps to LOG_STD_MIN
    s = Tensor(np.random.default_rng(2).normal(size=(5, 4)))
    mu, log_std = actor(s)
    assert np.all(log_std.data == LOG_STD_MIN)
    a, _ = actor.sample(s, np.random.default_rng(3))
    assert np.allclose(a.data, np.tanh(mu.data), atol=1e-6)


def test_log_std_clamped_above():
    actor = Actor(obs_dim=4, hidden=8, seed=4)
    actor.log_std_head.bias.data[:] = 50.0
    actor.log_std_head.weight.data[:] = 0.0
    _, log_std = actor(Tensor(np.zeros((1, 4))))
    assert np.all(log_std.data == LOG_STD_MAX)


def test_deterministic_mode_is_tanh_mean():
    agent = _small_agent(seed=5)
    obs = np.random.default_rng(4).normal(size=6)
    mu, _ = agent.actor(Tensor(obs.reshape(1, 6)))
    assert agent.sample_action(obs, deterministic=True) == pytest.approx(
        float(np.tanh(mu.data[0, 0])), abs=0.0
    )
    # repeated deterministic queries do not drift
    assert agent.sample_action(obs, deterministic=True) == agent.sample_action(
        obs, deterministic=True
    )


# -- critic updates -----------------------------------------------------------


def test_critic_loss_arithmetic_single_sample():
    agent = _small_agent(seed=6)
    rng = np.random.default_rng(5)
    batch = _batch(rng, size=1, obs_dim=6)
    s = Tensor(batch["obs"])
    a = Tensor(batch["action"].reshape(-1, 1))
    q1 = agent.critic1(s, a).data[:, 0]
    q2 = agent.critic2(s, a).data[:, 0]
    agent.target_value = lambda r, s2, d: q1 - 2.0
    loss1, loss2 = agent.critic_update(batch)
    assert loss1 == pytest.approx(2.0, abs=1e-12)
    assert loss2 == pytest.approx(0.5 * float(((q2 - (q1 - 2.0)) ** 2).item()), abs=1e-9)


def test_critic_loss_decreases_on_frozen_batch():
    agent = _small_agent(seed=7)
    rng = np.random.default_rng(6)
    batch = _batch(rng, size=64, obs_dim=6)
    y = rng.normal(size=64)
    agent.target_value = lambda r, s2, d: y
    first = agent.critic_update(batch)
    for _ in range(99):
        last = agent.critic_update(batch)
    assert last[0] < first[0]
    assert last[1] < first[1]


def test_target_networks_start_equal_and_track():
    agent = _small_agent(seed=8)
    for name, p in agent.target1.named_parameters().items():
        assert np.array_equal(p.data, agent.critic1.named_parameters()[name].data)
    rng = np.random.default_rng(7)
    batch = _batch(rng, size=32, obs_dim=6)
    agent.update(batch)
    online = agent.critic1.named_parameters()
    moved = [
        not np.array_equal(p.data, online[name].data)
        for name, p in agent.target1.named_parameters().items()
    ]
    assert any(moved)  # tau pulls targets off their old values
    for name, p in agent.target1.named_parameters().items():
        gap = np.max(np.abs(p.data - online[name].data))
        assert gap < 1.0  # still a convex blend, not a jump


# -- actor updates -------------------------------------------------------------


def test_actor_update_leaves_no_critic_gradients():
    agent = _small_agent(seed=9)
    batch = _batch(np.random.default_rng(8), size=16, obs_dim=6)
    agent.actor_update(batch)
    for p in agent.critic1.parameters() + agent.critic2.parameters():
        assert p.grad is None
        assert p.requires_grad  # freeze is scoped to the update
    assert any(p.grad is not None for p in agent.actor.parameters())


def test_actor_update_moves_actor_parameters():
    agent = _small_agent(seed=10)
    batch = _batch(np.random.default_rng(9), size=16, obs_dim=6)
    before = [p.data.copy() for p in agent.actor.parameters()]
    agent.actor_update(batch)
    after = agent.actor.parameters()
    assert any(not np.array_equal(b, a.data) for b, a in zip(before, after))


def test_entropy_term_scales_linearly_with_alpha():
    batch = _batch(np.random.default_rng(10), size=32, obs_dim=6)
    losses = []
    for alpha in (0.12, 0.24, 0.36):
        agent = _small_agent(seed=11, alpha=alpha, actor_lr=0.0)
        agent.rng = np.random.default_rng(77)
        losses.append(agent.actor_update(batch))
    assert (losses[1] - losses[0]) == pytest.approx(losses[2] - losses[1], abs=1e-9)
    assert losses[1] != losses[0]


def test_actor_chases_quadratic_critic_optimum():
    agent = _small_agent(seed=12, alpha=1e-12)
    agent._min_q = lambda s, a: -((a - 0.5) * (a - 0.5))
    rng = np.random.default_rng(11)
    obs = rng.normal(size=(32, 6))
    batch = {"obs": obs}

    def mean_action():
        a, _ = agent.actor.sample(Tensor(obs), np.random.default_rng(0))
        return float(a.data.mean())

    start_gap = abs(mean_action() - 0.5)
    for _ in range(2000):
        agent.actor_update(batch)
    end_gap = abs(mean_action() - 0.5)
    assert end_gap < start_gap
    assert end_gap < 0.2


# -- temperature ---------------------------------------------------------------


def test_alpha_fixed_by_default():
    agent = _small_agent(seed=13)
    batch = _batch(np.random.default_rng(12), size=16, obs_dim=6)
    for _ in range(3):
        agent.update(batch)
    assert agent.alpha == pytest.approx(0.12, abs=1e-12)


def test_auto_alpha_moves_toward_target_entropy():
    agent = _small_agent(seed=14, auto_alpha=True)
    before = agent.alpha
    agent._tune_alpha(np.array([3.0, 3.0]))  # entropy far below target: raise alpha
    assert agent.alpha > before
    agent2 = _small_agent(seed=14, auto_alpha=True)
    agent2._tune_alpha(np.array([-5.0, -5.0]))  # entropy above target: lower alpha
    assert agent2.alpha < before
    assert agent2.alpha > 0.0


# -- soft updates ---------------------------------------------------------------


def _affine_with(value: float) -> Affine:
    layer = Affine(2, 2, np.random.default_rng(0))
    layer.weight.data[:] = value
    layer.bias.data[:] = value
    return layer


def test_soft_update_tau_one_copies():
    online, target = _affine_with(1.0), _affine_with(0.0)
    soft_update(online, target, tau=1.0)
    assert np.all(target.weight.data == 1.0)


def test_soft_update_rate():
    online, target = _affine_with(1.0), _affine_with(0.0)
    soft_update(online, target, tau=0.005)
    assert np.allclose(target.weight.data, 0.005, atol=1e-15)
    assert np.allclose(target.bias.data, 0.005, atol=1e-15)


def test_soft_update_geometric_convergence():
    online, target = _affine_with(1.0), _affine_with(0.0)
    for _ in range(2000):
        soft_update(online, target, tau=0.01)
    assert np.all(np.abs(target.weight.data - 1.0) < 2e-9)


def test_soft_update_rejects_bad_tau():
    online, target = _affine_with(1.0), _affine_with(0.0)
    with pytest.raises(ValueError):
        soft_update(online, target, tau=0.0)
    with pytest.raises(ValueError):
        soft_update(online, target, tau=1.5)


# -- persistence -----------------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path):
    agent = _small_agent(seed=15)
    batch = _batch(np.random.default_rng(13), size=16, obs_dim=6)
    agent.update(batch)
    agent.save(tmp_path / "ck")
    twin = _small_agent(seed=99)
    twin.load(tmp_path / "ck")
    obs = np.random.default_rng(14).normal(size=6)
    assert twin.sample_action(obs, deterministic=True) == agent.sample_action(
        obs, deterministic=True
    )
    assert twin.alpha == pytest.approx(agent.alpha, abs=1e-12)


def test_update_returns_scalar_diagnostics():
    agent = _small_agent(seed=16)
    batch = _batch(np.random.default_rng(15), size=8, obs_dim=6)
    out = agent.update(batch)
    assert set(out) == {"critic1", "critic2", "actor", "alpha"}
    assert all(np.isfinite(v) for v in out.values())
