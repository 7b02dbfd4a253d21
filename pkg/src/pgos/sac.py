"""Soft actor-critic over the latent environment with a state-dependent entropy target."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .embedder import mlp
from .env import LatentEnv
from .utils import DTYPE, NumericalError, ValidationError, check_finite, np_rng, torch_gen

log = logging.getLogger(__name__)

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


@dataclass
class SACConfig:
    discount: float = 0.99
    polyak: float = 0.005
    buffer_size: int = 50_000
    batch_size: int = 128
    warmup_steps: int = 1_000
    total_steps: int = 30_000
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    alpha_lr: float = 3e-4
    hidden: int = 64
    init_alpha: float = 0.2
    log_every: int = 1_000
    early_stop: bool = False

    def validate(self) -> None:
        if not 0 <= self.discount < 1:
            raise ValidationError("sac.discount must lie in [0, 1)")
        if not 0 < self.polyak <= 1:
            raise ValidationError("sac.polyak must lie in (0, 1]")
        for name in ("buffer_size", "batch_size", "total_steps", "hidden", "log_every"):
            if getattr(self, name) < 1:
                raise ValidationError(f"sac.{name} must be >= 1")
        if self.warmup_steps < 0:
            raise ValidationError("sac.warmup_steps must be >= 0")
        for name in ("actor_lr", "critic_lr", "alpha_lr", "init_alpha"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"sac.{name} must be positive")


class Actor(nn.Module):
    """Diagonal Gaussian over pre-squash displacements."""

    def __init__(self, state_dim: int, action_dim: int, action_scale: float, hidden: int = 64,
                 gen: torch.Generator | None = None):
        super().__init__()
        self.action_dim = action_dim
        self.action_scale = float(action_scale)
        self.net = mlp([state_dim, hidden, hidden, 2 * action_dim], gen or torch_gen(0, "actor"))

    def forward(self, s: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        mean, log_std = self.net(s).chunk(2, dim=-1)
        return mean, log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)


def log1m_tanh2(u: torch.Tensor) -> torch.Tensor:
    """log(1 - tanh(u)^2), stable for large |u|."""
    return 2.0 * (math.log(2.0) - u - F.softplus(-2.0 * u))


def sample_action(s: torch.Tensor, actor: Actor, mode: str = "stochastic",
                  gen: torch.Generator | None = None,
                  noise: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor | None]:
    """Draw ``a = action_scale * tanh(mean + std * eps)``.

    ``log_prob`` is the exact log-density of the squashed action ``a / action_scale``
    on (-1, 1)^D; measuring it in box-normalized units keeps entropy targets
    independent of the action scale. Deterministic mode returns the squashed
    mean and no log-prob.
    """
    mean, log_std = actor(s)
    if mode == "deterministic":
        check_finite("actor output", mean)
        return actor.action_scale * torch.tanh(mean), None
    if mode != "stochastic":
        raise ValidationError(f"unknown sampling mode {mode!r}")
    if noise is None:
        noise = torch.randn(mean.shape, generator=gen, dtype=mean.dtype)
    u = mean + log_std.exp() * noise
    log_prob = (-0.5 * noise**2 - log_std - HALF_LOG_2PI - log1m_tanh2(u)).sum(-1)
    return actor.action_scale * torch.tanh(u), log_prob


class EnsembleLinear(nn.Module):
    def __init__(self, members: int, in_dim: int, out_dim: int, gen: torch.Generator):
        super().__init__()
        bound = 1.0 / math.sqrt(in_dim)
        self.weight = nn.Parameter((torch.rand(members, in_dim, out_dim, generator=gen, dtype=DTYPE) * 2 - 1) * bound)
        self.bias = nn.Parameter((torch.rand(members, 1, out_dim, generator=gen, dtype=DTYPE) * 2 - 1) * bound)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.baddbmm(self.bias, x, self.weight)


class TwinCritic(nn.Module):
    """Two independent Q-networks evaluated as one batched ensemble."""

    def __init__(self, state_dim: int, action_dim: int, hidden: int = 64,
                 gen: torch.Generator | None = None, role: str = "live"):
        super().__init__()
        gen = gen or torch_gen(0, "critic")
        self.role = role
        self.layers = nn.ModuleList([
            EnsembleLinear(2, state_dim + action_dim, hidden, gen),
            EnsembleLinear(2, hidden, hidden, gen),
            EnsembleLinear(2, hidden, 1, gen),
        ])

    def forward(self, s: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
        """Returns (2, B): one row per critic."""
        x = torch.cat([s, a], dim=-1).unsqueeze(0).expand(2, -1, -1)
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = torch.relu(x)
        return x.squeeze(-1)

    def make_target(self) -> "TwinCritic":
        target = copy.deepcopy(self)
        target.role = "target"
        target.requires_grad_(False)
        return target


def q_min(s: torch.Tensor, a: torch.Tensor, critics: TwinCritic) -> torch.Tensor:
    return critics(s, a).min(dim=0).values


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValidationError("replay capacity must be >= 1")
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity)
        self.h = np.zeros(capacity)
        self.inserted = 0

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def add(self, s, a, r, s2, done, h_target) -> None:
        i = self.inserted % self.capacity
        self.s[i], self.a[i], self.r[i], self.s2[i] = s, a, r, s2
        self.done[i], self.h[i] = float(done), h_target
        self.inserted += 1

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, torch.Tensor]:
        if len(self) == 0:
            raise ValidationError("cannot sample from an empty replay buffer")
        idx = rng.choice(len(self), size=min(batch_size, len(self)), replace=False)
        return {
            key: torch.as_tensor(getattr(self, key)[idx], dtype=DTYPE)
            for key in ("s", "a", "r", "s2", "done", "h")
        }


@dataclass
class TemperatureState:
    log_alpha: float
    lr: float

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)


def critic_targets(batch, actor: Actor, target: TwinCritic, alpha: float, discount: float,
                   gen: torch.Generator | None = None) -> torch.Tensor:
    if target.role != "target":
        raise ValidationError("critic targets must come from the target networks")
    with torch.no_grad():
        a2, logp2 = sample_action(batch["s2"], actor, "stochastic", gen)
        soft_q = q_min(batch["s2"], a2, target) - alpha * logp2
        return batch["r"] + discount * (1.0 - batch["done"]) * soft_q


def critic_update(batch, critics: TwinCritic, target: TwinCritic, actor: Actor, alpha: float,
                  discount: float, opt: torch.optim.Optimizer | None = None,
                  gen: torch.Generator | None = None) -> tuple[float, float]:
    if len(batch["r"]) == 0:
        raise ValidationError("empty batch")
    y = critic_targets(batch, actor, target, alpha, discount, gen)
    q = critics(batch["s"], batch["a"])
    losses = ((q - y) ** 2).mean(dim=1)
    check_finite("critic loss", losses)
    if opt is not None:
        opt.zero_grad()
        losses.sum().backward()
        opt.step()
    losses = losses.detach()
    return float(losses[0]), float(losses[1])


def actor_loss(states: torch.Tensor, actor: Actor, critics: TwinCritic, alpha: float,
               gen: torch.Generator | None = None,
               noise: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Reparameterized ``mean(alpha * log_pi - Q_min)``; critics are held fixed."""
    critics.requires_grad_(False)
    try:
        a, logp = sample_action(states, actor, "stochastic", gen, noise)
        loss = (alpha * logp - q_min(states, a, critics)).mean()
    finally:
        critics.requires_grad_(True)
    return loss, logp


def actor_update(batch, actor: Actor, critics: TwinCritic, alpha: float,
                 opt: torch.optim.Optimizer | None = None,
                 gen: torch.Generator | None = None) -> tuple[float, torch.Tensor]:
    loss, logp = actor_loss(batch["s"], actor, critics, alpha, gen)
    check_finite("actor loss", loss)
    if opt is not None:
        opt.zero_grad()
        loss.backward()
        opt.step()
    return float(loss.detach()), logp.detach()


def alpha_update(batch, actor: Actor | None, temp: TemperatureState,
                 log_probs: torch.Tensor | None = None,
                 gen: torch.Generator | None = None) -> TemperatureState:
    """One gradient step on log(alpha) against mean(-log_pi - H_target(s))."""
    if log_probs is None:
        with torch.no_grad():
            _, log_probs = sample_action(batch["s"], actor, "stochastic", gen)
    grad = float((-log_probs - batch["h"]).mean())
    new = TemperatureState(temp.log_alpha - temp.lr * grad, temp.lr)
    check_finite("temperature", new.log_alpha)
    return new


@torch.no_grad()
def polyak_update(live: nn.Module, target: nn.Module, tau: float) -> None:
    """target <- (1 - tau) * target + tau * live."""
    torch._foreach_lerp_(list(target.parameters()), list(live.parameters()), tau)


class SACAgent:
    def __init__(self, state_dim: int, action_dim: int, action_scale: float, cfg: SACConfig, seed: int):
        cfg.validate()
        self.cfg = cfg
        self.actor = Actor(state_dim, action_dim, action_scale, cfg.hidden, torch_gen(seed, "sac", "actor"))
        self.critics = TwinCritic(state_dim, action_dim, cfg.hidden, torch_gen(seed, "sac", "critic"))
        self.target = self.critics.make_target()
        self.temp = TemperatureState(math.log(cfg.init_alpha), cfg.alpha_lr)
        self.opt = torch.optim.Adam(
            [{"params": self.actor.parameters(), "lr": cfg.actor_lr},
             {"params": self.critics.parameters(), "lr": cfg.critic_lr}],
            fused=True,
        )
        self.gen = torch_gen(seed, "sac", "updates")

    def act(self, s: np.ndarray, mode: str = "stochastic") -> np.ndarray:
        with torch.no_grad():
            a, _ = sample_action(torch.as_tensor(s, dtype=DTYPE).unsqueeze(0), self.actor, mode, self.gen)
        a = a[0].numpy()
        if not np.isfinite(a).all():
            raise NumericalError("non-finite actor output")
        return a

    def update(self, batch) -> dict[str, float]:
        """Critic, actor, temperature and target updates from one batch.

        Critic and actor losses are built before either network moves and
        share one backward pass; they touch disjoint parameters, since the
        critic targets carry no gradient and the actor loss freezes the critics.
        """
        alpha = self.temp.alpha
        states, nxt = batch["s"], batch["s2"]
        n = len(states)
        # one actor pass over [s; s']; the s' half only feeds the detached targets
        noise = torch.randn(2 * n, self.actor.action_dim, generator=self.gen, dtype=DTYPE)
        acts, logps = sample_action(torch.cat([states, nxt]), self.actor, "stochastic", noise=noise)
        with torch.no_grad():
            soft_q = q_min(nxt, acts[n:], self.target) - alpha * logps[n:]
            y = batch["r"] + self.cfg.discount * (1.0 - batch["done"]) * soft_q
        c_losses = ((self.critics(states, batch["a"]) - y) ** 2).mean(dim=1)
        self.critics.requires_grad_(False)
        a_loss = (alpha * logps[:n] - q_min(states, acts[:n], self.critics)).mean()
        self.critics.requires_grad_(True)
        logp = logps[:n]
        check_finite("critic loss", c_losses)
        check_finite("actor loss", a_loss)
        self.opt.zero_grad()
        (c_losses.sum() + a_loss).backward()
        self.opt.step()
        logp = logp.detach()
        self.temp = alpha_update(batch, None, self.temp, log_probs=logp)
        polyak_update(self.critics, self.target, self.cfg.polyak)
        return {"critic_loss": float(c_losses.detach().mean()), "actor_loss": float(a_loss.detach()),
                "entropy": float(-logp.mean()), "alpha": self.temp.alpha}


def _mean(xs) -> float:
    return float(np.mean(xs)) if len(xs) else float("nan")


def train_policy(env: LatentEnv, cfg: SACConfig, seed: int) -> tuple[SACAgent, list[dict]]:
    """Interleave rollouts and updates for ``cfg.total_steps`` environment steps.

    Actions are uniform in the action box during warmup. One log row per
    ``cfg.log_every`` steps.
    """
    agent = SACAgent(env.dim, env.dim, env.cfg.action_scale, cfg, seed)
    buffer = ReplayBuffer(cfg.buffer_size, env.dim, env.dim)
    rng = np_rng(seed, "sac", "rollout")
    scale = env.cfg.action_scale
    state, ep_return = env.reset(rng), 0.0
    window = {"returns": [], "entropy": [], "critic_loss": [], "actor_loss": []}
    history: list[dict] = []
    for step in range(cfg.total_steps):
        if step < cfg.warmup_steps:
            action = rng.uniform(-scale, scale, env.dim)
        else:
            action = agent.act(state.position)
        h = env.target_entropy(state.position)
        nxt, r, done = env.step(state, action)
        buffer.add(state.position, action, r, nxt.position, done, h)
        ep_return += r
        if done:
            window["returns"].append(ep_return)
            state, ep_return = env.reset(rng), 0.0
        else:
            state = nxt
        if step >= cfg.warmup_steps and len(buffer) >= cfg.batch_size:
            stats = agent.update(buffer.sample(cfg.batch_size, rng))
            for key in ("entropy", "critic_loss", "actor_loss"):
                window[key].append(stats[key])
        if (step + 1) % cfg.log_every == 0:
            history.append({
                "step": step + 1,
                "episode_reward_mean": _mean(window["returns"]),
                "entropy_mean": _mean(window["entropy"]),
                "alpha": agent.temp.alpha,
                "critic_loss": _mean(window["critic_loss"]),
                "actor_loss": _mean(window["actor_loss"]),
            })
            window = {key: [] for key in window}
            if cfg.early_stop and _plateaued(history):
                log.info("policy reward plateaued at step %d", step + 1)
                break
    return agent, history


def _plateaued(history: list[dict], windows: int = 5, tol: float = 1e-3) -> bool:
    values = [row["episode_reward_mean"] for row in history[-(windows + 1):]]
    if len(values) < windows + 1 or any(math.isnan(v) for v in values):
        return False
    return all(abs(b - a) < tol for a, b in zip(values[:-1], values[1:]))


@dataclass
class CollectConfig:
    burn_in: float = 0.25
    eps_keep: float = 0.05
    episode_cap_factor: int = 50


def collect_outlier_latents(agent: SACAgent, env: LatentEnv, count: int, cfg: CollectConfig,
                            seed: int) -> np.ndarray:
    """Roll out the stochastic policy from prototype midpoints and keep post-burn-in
    states whose reward is at least ``-eps_keep``."""
    if count < 1:
        raise ValidationError("count must be >= 1")
    rng = np_rng(seed, "collect", "rollout")
    gen = torch_gen(seed, "collect", "policy")
    horizon = env.cfg.max_steps
    first_kept = int(math.ceil(cfg.burn_in * horizon))
    cap = max(1, cfg.episode_cap_factor * math.ceil(count / horizon))
    kept: list[np.ndarray] = []
    for _ in range(cap):
        state = env.reset(rng)
        for t in range(horizon):
            with torch.no_grad():
                a, _ = sample_action(torch.as_tensor(state.position, dtype=DTYPE).unsqueeze(0),
                                     agent.actor, "stochastic", gen)
            state, r, _ = env.step(state, a[0].numpy())
            inside = np.linalg.norm(state.position - env.boundary.center) <= env.boundary.r_max + 1e-9
            if t + 1 > first_kept and r >= -cfg.eps_keep and inside:
                kept.append(state.position.copy())
                if len(kept) == count:
                    return np.array(kept)
    log.warning("episode cap %d reached with %d/%d latents collected", cap, len(kept), count)
    if not kept:
        return np.zeros((0, env.dim))
    return np.array(kept)

