import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from pgos.env import ClusterStats, EnvConfig, GlobalBoundary, LatentEnv
from pgos.sac import (LOG_STD_MAX, LOG_STD_MIN, Actor, CollectConfig, ReplayBuffer, SACAgent,
                      SACConfig, TemperatureState, TwinCritic, actor_loss, alpha_update,
                      collect_outlier_latents, critic_targets, critic_update, log1m_tanh2,
                      polyak_update, sample_action, train_policy)
from pgos.utils import DTYPE, ValidationError, torch_gen


class ConstActor(Actor):
    """Fixed mean and log-std regardless of state."""

    def __init__(self, mean, log_std, scale=1.0):
        super().__init__(1, len(mean), scale, hidden=2)
        self.mean = torch.tensor(mean, dtype=DTYPE)
        self.log_std = torch.tensor(log_std, dtype=DTYPE)

    def forward(self, s):
        shape = (len(s), len(self.mean))
        return self.mean.expand(shape), self.log_std.expand(shape)


class ConstCritic(TwinCritic):
    def __init__(self, value, role="live"):
        super().__init__(1, 1, hidden=2, role=role)
        self.value = value

    def forward(self, s, a):
        return torch.full((2, len(s)), float(self.value), dtype=DTYPE) + 0.0 * a.sum(-1)


# --------------------------------------------------------- temperature


@given(log_alpha=st.floats(-20, 5), lr=st.floats(1e-5, 1.0),
       logp=st.lists(st.floats(-10, 10), min_size=1, max_size=8), h=st.floats(-5, 5))
def test_alpha_positive_and_moves_toward_target(log_alpha, lr, logp, h):
    log_probs = torch.tensor(logp, dtype=DTYPE)
    batch = {"h": torch.full_like(log_probs, h)}
    new = alpha_update(batch, None, TemperatureState(log_alpha, lr), log_probs=log_probs)
    assert new.alpha > 0
    entropy = float(-log_probs.mean())
    if entropy < h - 1e-9:
        assert new.log_alpha > log_alpha
    elif entropy > h + 1e-9:
        assert new.log_alpha < log_alpha


def test_alpha_hand_step_and_fixed_point():
    temp = TemperatureState(math.log(0.2), 0.1)
    logp = torch.tensor([-1.0, -3.0], dtype=DTYPE)  # entropy 2
    new = alpha_update({"h": torch.tensor([3.0, 3.0], dtype=DTYPE)}, None, temp, log_probs=logp)
    assert new.log_alpha == pytest.approx(math.log(0.2) + 0.1, abs=1e-15)
    same = alpha_update({"h": -logp}, None, temp, log_probs=logp)
    assert same.log_alpha == temp.log_alpha


# -------------------------------------------------------- polyak, buffer


def test_polyak_tracking_factor():
    live = TwinCritic(2, 2, hidden=4, gen=torch_gen(0, "a"))
    target = TwinCritic(2, 2, hidden=4, gen=torch_gen(1, "b"), role="target")
    live.requires_grad_(False)
    gap0 = [(t - l).clone() for t, l in zip(target.parameters(), live.parameters())]
    tau = 0.05
    for _ in range(10):
        polyak_update(live, target, tau)
    for g0, t, l in zip(gap0, target.parameters(), live.parameters()):
        assert torch.allclose(t - l, g0 * (1 - tau) ** 10, atol=1e-14, rtol=0)


def test_replay_fifo_with_sentinels():
    buf = ReplayBuffer(3, 1, 1)
    for i in range(5):
        buf.add([i], [i], float(i), [i], False, 0.0)
    assert len(buf) == 3
    assert sorted(buf.r.tolist()) == [2.0, 3.0, 4.0]
    batch = buf.sample(10, np.random.default_rng(0))
    assert sorted(batch["r"].tolist()) == [2.0, 3.0, 4.0]
    with pytest.raises(ValidationError):
        ReplayBuffer(2, 1, 1).sample(1, np.random.default_rng(0))
    with pytest.raises(ValidationError):
        ReplayBuffer(0, 1, 1)


# ---------------------------------------------------------------- actor


def test_log1m_tanh2_stable():
    u = torch.tensor([-30.0, -2.0, 0.0, 0.7, 30.0], dtype=DTYPE)
    ref = torch.log(1 - torch.tanh(u[1:4]) ** 2)
    assert torch.allclose(log1m_tanh2(u)[1:4], ref, atol=1e-14)
    assert torch.isfinite(log1m_tanh2(u)).all()
    assert float(log1m_tanh2(u)[-1]) == pytest.approx(2 * math.log(2) - 60, abs=1e-9)


def _density_1d(actor, x):
    """Log-density the sampler assigns to the normalized action x in (-1, 1)."""
    mean, log_std = float(actor.mean[0]), float(actor.log_std[0])
    u = np.arctanh(x)
    noise = torch.tensor([[(u - mean) / math.exp(log_std)]], dtype=DTYPE)
    _, logp = sample_action(torch.zeros(1, 1, dtype=DTYPE), actor, noise=noise)
    return float(logp[0])


@pytest.mark.parametrize("mean,log_std", [(0.0, 0.0), (0.8, -0.7), (-1.5, 0.3)])
def test_log_prob_integrates_to_one(mean, log_std):
    actor = ConstActor([mean], [log_std], scale=0.3)
    total, _ = integrate.quad(lambda x: math.exp(_density_1d(actor, x)), -1, 1, limit=200)
    assert abs(total - 1.0) < 1e-4
    x = 0.4
    u = math.atanh(x)
    sd = math.exp(log_std)
    ref = -0.5 * ((u - mean) / sd) ** 2 - math.log(sd) - 0.5 * math.log(2 * math.pi) - math.log(1 - x * x)
    assert abs(_density_1d(actor, x) - ref) < 1e-12


def test_monte_carlo_entropy_matches_quadrature():
    actor = ConstActor([0.3], [-0.5])
    exact, _ = integrate.quad(lambda x: -math.exp(_density_1d(actor, x)) * _density_1d(actor, x), -1, 1,
                              limit=200)
    n = 200_000
    _, logp = sample_action(torch.zeros(n, 1, dtype=DTYPE), actor, gen=torch_gen(0, "mc"))
    est = float(-logp.mean())
    se = float(logp.std()) / math.sqrt(n)
    assert abs(est - exact) < 4 * se


@given(seed=st.integers(0, 1000), scale=st.floats(0.01, 5.0))
def test_actions_bounded_and_deterministic_mode(seed, scale):
    actor = Actor(3, 2, scale, hidden=8, gen=torch_gen(seed, "a"))
    s = torch.randn(16, 3, dtype=DTYPE, generator=torch_gen(seed, "s")) * 10
    a, logp = sample_action(s, actor, gen=torch_gen(seed, "n"))
    assert torch.all(a.abs() <= scale)
    assert torch.isfinite(logp).all()
    d1, none = sample_action(s, actor, "deterministic")
    d2, _ = sample_action(s, actor, "deterministic")
    assert none is None and torch.equal(d1, d2)
    mean, log_std = actor(s)
    assert torch.equal(d1, scale * torch.tanh(mean))
    assert torch.all((log_std >= LOG_STD_MIN) & (log_std <= LOG_STD_MAX))


def test_unknown_sampling_mode():
    with pytest.raises(ValidationError):
        sample_action(torch.zeros(1, 1, dtype=DTYPE), ConstActor([0.0], [0.0]), "greedy")


def test_actor_loss_with_constant_critic_is_entropy_only():
    actor = Actor(2, 2, 0.5, hidden=6, gen=torch_gen(0, "a"))
    states = torch.randn(5, 2, dtype=DTYPE, generator=torch_gen(0, "s"))
    noise = torch.randn(5, 2, dtype=DTYPE, generator=torch_gen(0, "e"))
    loss, _ = actor_loss(states, actor, ConstCritic(3.0), 0.7, noise=noise)
    grads = torch.autograd.grad(loss, list(actor.parameters()))
    _, logp = sample_action(states, actor, noise=noise)
    ref = torch.autograd.grad(0.7 * logp.mean(), list(actor.parameters()))
    for g, r in zip(grads, ref):
        assert torch.allclose(g, r, atol=1e-14)
    zero, _ = actor_loss(states, actor, ConstCritic(3.0), 0.0, noise=noise)
    assert float(zero.detach()) == pytest.approx(-3.0, abs=1e-14)


def test_actor_loss_leaves_critic_gradients_untouched():
    actor = Actor(2, 2, 0.5, hidden=6, gen=torch_gen(0, "a"))
    critics = TwinCritic(2, 2, hidden=4, gen=torch_gen(0, "c"))
    loss, _ = actor_loss(torch.zeros(3, 2, dtype=DTYPE), actor, critics, 0.1, gen=torch_gen(1, "n"))
    loss.backward()
    assert all(p.grad is None for p in critics.parameters())
    assert all(p.requires_grad for p in critics.parameters())


# -------------------------------------------------------------- critics


def _batch(n=4):
    return {"s": torch.zeros(n, 1, dtype=DTYPE), "a": torch.zeros(n, 1, dtype=DTYPE),
            "r": torch.arange(n, dtype=DTYPE), "s2": torch.ones(n, 1, dtype=DTYPE),
            "done": torch.zeros(n, dtype=DTYPE)}


def test_critic_targets_terminal_and_discount():
    actor = ConstActor([0.0], [0.0])
    target = ConstCritic(5.0, role="target")
    b = _batch()
    b["done"] = torch.ones(4, dtype=DTYPE)
    assert torch.equal(critic_targets(b, actor, target, 0.2, 0.99), b["r"])
    b["done"] = torch.zeros(4, dtype=DTYPE)
    assert torch.equal(critic_targets(b, actor, target, 0.2, 0.0), b["r"])
    # alpha = 0: y = r + gamma * Q'
    assert torch.allclose(critic_targets(b, actor, target, 0.0, 0.5), b["r"] + 2.5)
    with pytest.raises(ValidationError, match="target"):
        critic_targets(b, actor, ConstCritic(5.0), 0.2, 0.99)


def test_critic_update_reduces_loss():
    actor = Actor(1, 1, 1.0, hidden=4, gen=torch_gen(0, "a"))
    critics = TwinCritic(1, 1, hidden=8, gen=torch_gen(0, "c"))
    target = critics.make_target()
    opt = torch.optim.Adam(critics.parameters(), lr=1e-2)
    b = _batch()
    b["s"] = torch.linspace(-1, 1, 4, dtype=DTYPE).unsqueeze(1)
    b["done"] = torch.ones(4, dtype=DTYPE)
    first = critic_update(b, critics, target, actor, 0.2, 0.99, opt)
    for _ in range(200):
        last = critic_update(b, critics, target, actor, 0.2, 0.99, opt)
    assert sum(last) < 0.1 * sum(first)


# ------------------------------------------------------------ training


def far_env(**kw):
    """Single small cluster far from the reachable ball: reward is identically zero."""
    stats = ClusterStats(np.array([[50.0, 50.0]]), np.array([0.1]), np.array([1]), np.array([0]))
    boundary = GlobalBoundary(np.zeros(2), 1.0)
    return LatentEnv(stats, boundary, np.array([[0.5, 0.0], [-0.5, 0.0]]), EnvConfig(**kw))


def test_training_is_deterministic():
    cfg = SACConfig(total_steps=400, warmup_steps=100, batch_size=32, hidden=16, log_every=100)
    _, h1 = train_policy(far_env(), cfg, seed=3)
    _, h2 = train_policy(far_env(), cfg, seed=3)
    assert json.dumps(h1) == json.dumps(h2)
    assert set(h1[0]) == {"step", "episode_reward_mean", "entropy_mean", "alpha", "critic_loss",
                          "actor_loss"}


def test_entropy_rises_under_zero_reward():
    env = far_env(h_max=2.0)
    cfg = SACConfig(total_steps=3000, warmup_steps=200, batch_size=64, hidden=16, log_every=500)
    agent, hist = train_policy(env, cfg, seed=0)
    assert all(row["episode_reward_mean"] == 0.0 for row in hist if not math.isnan(row["episode_reward_mean"]))
    assert hist[-1]["entropy_mean"] > hist[0]["entropy_mean"]


def test_collect_filters_by_reward_and_burn_in():
    stats = ClusterStats(np.array([[0.0, 0.0]]), np.array([0.3]), np.array([5]), np.array([0]))
    env = LatentEnv(stats, GlobalBoundary(np.zeros(2), 1.0), np.array([[0.2, 0.0], [-0.2, 0.0]]),
                    EnvConfig(max_steps=8))
    agent = SACAgent(2, 2, env.cfg.action_scale, SACConfig(hidden=8), seed=0)
    lat = collect_outlier_latents(agent, env, 20, CollectConfig(eps_keep=0.05), seed=0)
    assert len(lat) <= 20
    assert all(env.reward(p) >= -0.05 for p in lat)
    again = collect_outlier_latents(agent, env, 20, CollectConfig(eps_keep=0.05), seed=0)
    np.testing.assert_array_equal(lat, again)
    with pytest.raises(ValidationError):
        collect_outlier_latents(agent, env, 0, CollectConfig(), seed=0)


def test_agent_update_reports_positive_alpha():
    env = far_env()
    agent = SACAgent(2, 2, env.cfg.action_scale, SACConfig(hidden=8), seed=0)
    buf = ReplayBuffer(64, 2, 2)
    rng = np.random.default_rng(0)
    for _ in range(64):
        buf.add(rng.normal(size=2), rng.normal(size=2) * 0.05, 0.0, rng.normal(size=2), False, 1.0)
    stats = agent.update(buf.sample(32, rng))
    assert stats["alpha"] > 0 and all(math.isfinite(v) for v in stats.values())


def test_sac_config_validation():
    with pytest.raises(ValidationError):
        SACConfig(discount=1.0).validate()
    with pytest.raises(ValidationError):
        SACConfig(polyak=0).validate()
