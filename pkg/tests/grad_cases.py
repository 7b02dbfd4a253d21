"""Tiny randomly initialized models for finite-difference gradient checks.

Each builder returns ``(loss_fn, params, rel_tol)``. Randomness (augmented
views, decoder noise, actor noise, critic targets) is drawn once up front so
every ``loss_fn()`` call evaluates the same deterministic function.
"""

from __future__ import annotations

import numpy as np
import torch

from pgos.detector import Detector, DetectorConfig, detector_loss
from pgos.embedder import (Embedder, EmbedderConfig, loss_dc, loss_ips, loss_pc, loss_recon,
                           objective)
from pgos.graphs import AugmentationConfig, augment, collate
from pgos.sac import Actor, TwinCritic, actor_loss, critic_targets
from pgos.utils import DTYPE, torch_gen

from conftest import random_graph

TINY = EmbedderConfig(dim=3, hidden=4, layers=2, n_prototypes=3, tau=0.5, noise_dim=2,
                      decoder_hidden=4, gamma=0.5)


def _graphs(seed, count=6):
    rng = np.random.default_rng(seed)
    return [random_graph(rng, int(rng.integers(3, 7)), d=2, p=0.4) for _ in range(count)]


def _views(graphs, seed):
    rng = np.random.default_rng(seed)
    aug = AugmentationConfig(0.2, 0.2)
    return (collate([augment(g, aug, rng) for g in graphs]),
            collate([augment(g, aug, rng) for g in graphs]))


def _tiny_embedder(seed):
    return Embedder(2, TINY, seed=seed)


def _embedder_params(model, with_decoder=False):
    params = list(model.encoder.parameters()) + [model.prototypes.vectors]
    if with_decoder:
        params += list(model.decoder.parameters())
    return params


def case_dc(seed=0):
    model = _tiny_embedder(seed)
    v1, v2 = _views(_graphs(seed), seed)

    def fn():
        return loss_dc(model.encoder(v1)[1], model.encoder(v2)[1], model.prototypes.vectors, TINY.tau)
    return fn, list(model.encoder.parameters()), 1e-4


def case_pc(seed=0):
    model = _tiny_embedder(seed)
    v1, v2 = _views(_graphs(seed), seed)

    def fn():
        return loss_pc(model.encoder(v1)[1], model.encoder(v2)[1], model.prototypes.vectors, TINY.tau)
    return fn, _embedder_params(model), 1e-4


def case_ips(seed=0):
    gen = torch_gen(seed, "ips")
    protos = torch.randn(5, 4, dtype=DTYPE, generator=gen).requires_grad_(True)
    return (lambda: loss_ips(protos)), [protos], 1e-4


def case_recon(seed=0):
    model = _tiny_embedder(seed)
    clean = collate(_graphs(seed))
    noise = model.decoder.sample_noise(len(clean.mask), clean.adjacency.shape[1], torch_gen(seed, "n"))

    def fn():
        _, z = model.encoder(clean)
        probs, feats = model.decoder(z, noise)
        return loss_recon(clean.adjacency, clean.features, clean.mask, probs, feats, TINY.lam)
    return fn, list(model.encoder.parameters()) + list(model.decoder.parameters()), 1e-4


def case_total(seed=0):
    model = _tiny_embedder(seed)
    graphs = _graphs(seed)
    v1, v2 = _views(graphs, seed)
    clean = collate(graphs)
    noise = model.decoder.sample_noise(len(graphs), clean.adjacency.shape[1], torch_gen(seed, "n"))
    return (lambda: objective(model, v1, v2, clean, noise, TINY)["L_total"],
            _embedder_params(model, with_decoder=True), 1e-4)


def _toy_actor_critic(seed, state_dim=2, action_dim=2):
    actor = Actor(state_dim, action_dim, action_scale=0.3, hidden=6, gen=torch_gen(seed, "actor"))
    critics = TwinCritic(state_dim, action_dim, hidden=4, gen=torch_gen(seed, "critic"))
    states = torch.randn(8, state_dim, dtype=DTYPE, generator=torch_gen(seed, "s"))
    return actor, critics, states


def case_actor(seed=0):
    actor, critics, states = _toy_actor_critic(seed)
    noise = torch.randn(8, 2, dtype=DTYPE, generator=torch_gen(seed, "eps"))
    return (lambda: actor_loss(states, actor, critics, 0.2, noise=noise)[0],
            list(actor.parameters()), 1e-3)


def case_critic(seed=0):
    actor, critics, states = _toy_actor_critic(seed)
    gen = torch_gen(seed, "batch")
    batch = {"s": states, "a": torch.rand(8, 2, dtype=DTYPE, generator=gen) - 0.5,
             "r": -torch.rand(8, dtype=DTYPE, generator=gen), "s2": states.flip(0),
             "done": (torch.arange(8) % 3 == 0).to(DTYPE)}
    y = critic_targets(batch, actor, critics.make_target(), 0.2, 0.99, torch_gen(seed, "t"))

    def fn():
        return ((critics(batch["s"], batch["a"]) - y) ** 2).mean(dim=1).sum()
    return fn, list(critics.parameters()), 1e-4


def case_detector(seed=0, with_outliers=True):
    """The outlier term sees detached prototypes, so with outliers only encoder weights are checked."""
    model = _tiny_embedder(seed)
    graphs = _graphs(seed)
    det = Detector(model.encoder, model.prototypes, beta=0.5, margin=0.4, scale=0.3)
    cfg = DetectorConfig(beta=0.5, contrastive_weight=0.1)
    views = _views(graphs, seed)
    batch = collate(graphs)
    pseudo = collate(_graphs(seed + 1, count=4)) if with_outliers else None
    params = list(det.encoder.parameters()) if with_outliers else list(det.parameters())
    return (lambda: detector_loss(det, batch, views, pseudo, cfg)[2], params, 1e-4)


CASES = {
    "L_DC": case_dc,
    "L_PC": case_pc,
    "L_IPS": case_ips,
    "L_recon": case_recon,
    "L_total": case_total,
    "actor": case_actor,
    "critic": case_critic,
    "detector": case_detector,
    "detector_id": lambda seed=0: case_detector(seed, with_outliers=False),
}


def alpha_gradient_oracle(log_probs, h) -> float:
    """Autograd derivative of the temperature loss mean(log_alpha * (-log_pi - h))."""
    log_alpha = torch.zeros((), dtype=DTYPE, requires_grad=True)
    loss = (log_alpha * (-torch.as_tensor(log_probs) - torch.as_tensor(h))).mean()
    loss.backward()
    return float(log_alpha.grad)
