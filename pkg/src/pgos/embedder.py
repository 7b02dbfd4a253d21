"""GCN encoder / noise-expansion decoder with learnable prototypes.

Training minimizes the prototypical contrastive objective (debiased
contrastive + prototype consistency + inter-prototype separation) plus a
weighted reconstruction loss.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .graphs import AugmentationConfig, Graph, GraphBatch, augment, collate
from .utils import DTYPE, ValidationError, check_finite, np_rng, torch_gen

log = logging.getLogger(__name__)

BCE_EPS = 1e-7
NORM_GUARD = 1e-12


def init_linear(layer: nn.Linear, gen: torch.Generator) -> nn.Linear:
    bound = 1.0 / math.sqrt(layer.in_features)
    with torch.no_grad():
        layer.weight.copy_((torch.rand(layer.weight.shape, generator=gen, dtype=DTYPE) * 2 - 1) * bound)
        if layer.bias is not None:
            layer.bias.copy_((torch.rand(layer.bias.shape, generator=gen, dtype=DTYPE) * 2 - 1) * bound)
    return layer


def mlp(sizes: Sequence[int], gen: torch.Generator, act=nn.ReLU) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(init_linear(nn.Linear(a, b, dtype=DTYPE), gen))
        if i < len(sizes) - 2:
            layers.append(act())
    return nn.Sequential(*layers)


def l2_normalize(z: torch.Tensor) -> torch.Tensor:
    """Unit-normalize the last axis; near-zero vectors get a fixed offset first."""
    norm = z.norm(dim=-1, keepdim=True)
    guard = torch.full_like(z, 1e-6 / math.sqrt(z.shape[-1]))
    z = torch.where(norm < NORM_GUARD, z + guard, z)
    return z / z.norm(dim=-1, keepdim=True)


def normalized_propagation(adj: torch.Tensor) -> torch.Tensor:
    """D^-1/2 (A + I) D^-1/2 for a (..., N, N) adjacency."""
    eye = torch.eye(adj.shape[-1], dtype=adj.dtype)
    a_hat = adj + eye
    inv_sqrt = a_hat.sum(-1).rsqrt()
    return inv_sqrt.unsqueeze(-1) * a_hat * inv_sqrt.unsqueeze(-2)


class GCNEncoder(nn.Module):
    def __init__(self, in_dim: int, hidden: int = 32, out_dim: int = 16, layers: int = 2,
                 gen: torch.Generator | None = None):
        super().__init__()
        gen = gen or torch_gen(0, "encoder")
        dims = [in_dim] + [hidden] * (layers - 1) + [out_dim]
        self.in_dim, self.out_dim = in_dim, out_dim
        self.layers = nn.ModuleList(
            init_linear(nn.Linear(a, b, dtype=DTYPE), gen) for a, b in zip(dims[:-1], dims[1:])
        )

    def forward(self, batch: GraphBatch) -> tuple[torch.Tensor, torch.Tensor]:
        if batch.features.shape[-1] != self.in_dim:
            raise ValidationError(
                f"feature dim {batch.features.shape[-1]} != encoder input dim {self.in_dim}"
            )
        prop = normalized_propagation(batch.adjacency)
        h = batch.features
        for i, layer in enumerate(self.layers):
            h = prop @ layer(h)
            if i < len(self.layers) - 1:
                h = torch.relu(h)
        mask = batch.mask.unsqueeze(-1)
        h = h * mask
        pooled = h.sum(1) / mask.sum(1)
        return h, l2_normalize(pooled)


class Decoder(nn.Module):
    """Expands one graph latent into ``n`` node embeddings via per-node noise.

    Edge logits are node-embedding inner products plus a latent-dependent
    offset; features come from a feed-forward head. Without the offset,
    sparse graphs are out of reach: more than ``node_dim + 1`` vectors cannot
    have uniformly negative pairwise inner products.
    """

    def __init__(self, latent_dim: int, feat_dim: int, noise_dim: int = 4, node_dim: int = 16,
                 hidden: int = 32, gen: torch.Generator | None = None):
        super().__init__()
        gen = gen or torch_gen(0, "decoder")
        self.latent_dim, self.feat_dim, self.noise_dim = latent_dim, feat_dim, noise_dim
        self.expand = mlp([latent_dim + noise_dim, hidden, node_dim], gen, act=nn.Tanh)
        self.feature_head = mlp([node_dim, hidden, feat_dim], gen)
        self.edge_offset = init_linear(nn.Linear(latent_dim, 1, dtype=DTYPE), gen)
        # training latents are unit vectors; decode() maps other points radially onto the sphere
        self.normalize_input = True

    def forward(self, latent: torch.Tensor, noise: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """latent (B, D), noise (B, N, k) -> edge probabilities (B, N, N), features (B, N, d)."""
        n = noise.shape[1]
        z = latent.unsqueeze(1).expand(-1, n, -1)
        nodes = self.expand(torch.cat([z, noise], dim=-1))
        logits = nodes @ nodes.transpose(-1, -2) + self.edge_offset(latent).unsqueeze(-1)
        probs = torch.sigmoid(logits)
        probs = probs * (1.0 - torch.eye(n, dtype=probs.dtype))
        return probs, self.feature_head(nodes)

    def sample_noise(self, batch: int, n: int, gen: torch.Generator) -> torch.Tensor:
        return torch.randn(batch, n, self.noise_dim, generator=gen, dtype=DTYPE)

    def decode(self, latent, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
        if n < 1:
            raise ValidationError("decode needs n >= 1 nodes")
        latent = torch.as_tensor(np.asarray(latent), dtype=DTYPE).reshape(1, -1)
        if self.normalize_input:
            latent = l2_normalize(latent)
        noise = self.sample_noise(1, n, torch_gen(seed, "decode"))
        with torch.no_grad():
            probs, feats = self(latent, noise)
        return probs[0].numpy(), feats[0].numpy()


class PrototypeSet(nn.Module):
    def __init__(self, vectors: torch.Tensor, tau: float = 0.2):
        super().__init__()
        if vectors.ndim != 2 or vectors.shape[0] < 2:
            raise ValidationError("need K >= 2 prototypes")
        if tau <= 0:
            raise ValidationError("temperature must be positive")
        self.vectors = nn.Parameter(l2_normalize(vectors.to(DTYPE)).detach().clone())
        self.tau = float(tau)

    @property
    def k(self) -> int:
        return self.vectors.shape[0]

    @torch.no_grad()
    def renormalize(self) -> None:
        self.vectors.copy_(l2_normalize(self.vectors))


# -------------------------------------------------------------------- losses


def assignment_probs(z: torch.Tensor, protos: torch.Tensor, tau: float) -> torch.Tensor:
    return torch.softmax(z @ protos.T / tau, dim=-1)


def nearest_prototype(z: torch.Tensor, protos: torch.Tensor) -> torch.Tensor:
    """Index of the prototype with the largest dot product; ties go to the lowest index."""
    return torch.argmax(z @ protos.T, dim=-1)


def loss_dc(z1: torch.Tensor, z2: torch.Tensor, protos: torch.Tensor, tau: float,
            reduction: str = "mean") -> torch.Tensor:
    """Debiased contrastive loss.

    Anchor ``z1[i]`` is contrasted with its positive ``z2[i]`` and with the
    second-view embeddings of other graphs assigned to a different prototype.
    Assignments are treated as constants.
    """
    with torch.no_grad():
        c1 = nearest_prototype(z1, protos)
        c2 = nearest_prototype(z2, protos)
    logits = z1 @ z2.T / tau
    n = logits.shape[0]
    eye = torch.eye(n, dtype=torch.bool)
    keep = eye | ((c1.unsqueeze(1) != c2.unsqueeze(0)) & ~eye)
    masked = logits.masked_fill(~keep, float("-inf"))
    per_anchor = torch.logsumexp(masked, dim=1) - logits.diagonal()
    if reduction == "none":
        return per_anchor
    return per_anchor.mean()


def loss_pc(z1: torch.Tensor, z2: torch.Tensor, protos: torch.Tensor, tau: float) -> torch.Tensor:
    """Symmetric cross-entropy between the two views' prototype assignments."""
    logits1, logits2 = z1 @ protos.T / tau, z2 @ protos.T / tau
    logp1, logp2 = torch.log_softmax(logits1, -1), torch.log_softmax(logits2, -1)
    ce12 = -(logp2.exp() * logp1).sum(-1)
    ce21 = -(logp1.exp() * logp2).sum(-1)
    return 0.5 * (ce12 + ce21).mean()


def loss_ips(protos: torch.Tensor) -> torch.Tensor:
    """Negative mean squared distance over ordered prototype pairs."""
    k = protos.shape[0]
    diff = protos.unsqueeze(0) - protos.unsqueeze(1)
    return -(diff**2).sum() / (k * (k - 1))


def loss_recon(adj: torch.Tensor, feats: torch.Tensor, mask: torch.Tensor,
               adj_probs: torch.Tensor, feats_hat: torch.Tensor, lam: float) -> torch.Tensor:
    """Summed squared feature error plus ``lam`` times off-diagonal edge BCE, per graph, summed."""
    node_mask = mask.unsqueeze(-1)
    feat_err = (((feats - feats_hat) * node_mask) ** 2).sum(dim=(1, 2))
    pair_mask = mask.unsqueeze(-1) * mask.unsqueeze(-2)
    pair_mask = pair_mask * (1.0 - torch.eye(adj.shape[-1], dtype=adj.dtype))
    p = adj_probs.clamp(BCE_EPS, 1.0 - BCE_EPS)
    bce = -(adj * torch.log(p) + (1.0 - adj) * torch.log1p(-p))
    struct = (bce * pair_mask).sum(dim=(1, 2))
    return (feat_err + lam * struct).sum()


# -------------------------------------------------------------------- model


@dataclass
class EmbedderConfig:
    dim: int = 16
    hidden: int = 32
    layers: int = 2
    n_prototypes: int = 4
    tau: float = 0.2
    lam: float = 1.0
    gamma: float = 0.001
    epochs: int = 40
    lr: float = 1e-3
    batch_size: int = 32
    edge_drop_p: float = 0.2
    feat_mask_p: float = 0.2
    noise_dim: int = 4
    decoder_hidden: int = 32

    def validate(self) -> None:
        if self.n_prototypes < 2:
            raise ValidationError("n_prototypes must be >= 2")
        for name in ("dim", "hidden", "layers", "epochs", "batch_size", "noise_dim", "decoder_hidden"):
            if getattr(self, name) < 1:
                raise ValidationError(f"embedder.{name} must be >= 1")
        for name in ("tau", "lr"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"embedder.{name} must be positive")
        if self.lam < 0 or self.gamma < 0:
            raise ValidationError("embedder.lam and embedder.gamma must be non-negative")
        AugmentationConfig(self.edge_drop_p, self.feat_mask_p)


class Embedder(nn.Module):
    def __init__(self, feat_dim: int, cfg: EmbedderConfig, seed: int = 0,
                 prototypes: torch.Tensor | None = None):
        super().__init__()
        self.feat_dim = feat_dim
        self.cfg = cfg
        self.encoder = GCNEncoder(feat_dim, cfg.hidden, cfg.dim, cfg.layers,
                                  gen=torch_gen(seed, "embedder", "encoder"))
        self.decoder = Decoder(cfg.dim, feat_dim, cfg.noise_dim, cfg.dim, cfg.decoder_hidden,
                               gen=torch_gen(seed, "embedder", "decoder"))
        if prototypes is None:
            prototypes = torch.randn(cfg.n_prototypes, cfg.dim, dtype=DTYPE,
                                     generator=torch_gen(seed, "embedder", "prototypes"))
        self.prototypes = PrototypeSet(prototypes, cfg.tau)

    def embed(self, graphs: Sequence[Graph], batch_size: int = 256) -> torch.Tensor:
        with torch.no_grad():
            return torch.cat([self.encoder(collate(graphs[i:i + batch_size]))[1]
                              for i in range(0, len(graphs), batch_size)])


def objective(model: Embedder, view1: GraphBatch, view2: GraphBatch, clean: GraphBatch,
              noise: torch.Tensor, cfg: EmbedderConfig) -> dict[str, torch.Tensor]:
    """All loss components of one step; ``total`` is what gets minimized.

    The first view's latent reconstructs the clean graph.
    """
    protos = model.prototypes.vectors
    _, z1 = model.encoder(view1)
    _, z2 = model.encoder(view2)
    l_dc = loss_dc(z1, z2, protos, cfg.tau)
    l_pc = loss_pc(z1, z2, protos, cfg.tau)
    l_ips = loss_ips(protos)
    probs, feats_hat = model.decoder(z1, noise)
    l_rec = loss_recon(clean.adjacency, clean.features, clean.mask, probs, feats_hat, cfg.lam)
    total = l_dc + l_pc + l_ips + cfg.gamma * l_rec
    return {"L_DC": l_dc, "L_PC": l_pc, "L_IPS": l_ips, "L_recon": l_rec, "L_total": total}


def farthest_point_prototypes(z: torch.Tensor, k: int, rng: np.random.Generator) -> torch.Tensor:
    """Pick ``k`` embeddings by farthest-point traversal from a random start.

    Falls back to random unit vectors once no remaining candidate is distinct.
    """
    chosen = [int(rng.integers(len(z)))]
    dist = (z - z[chosen[0]]).norm(dim=1)
    picks = [z[chosen[0]]]
    while len(picks) < k:
        j = int(torch.argmax(dist))
        if dist[j] < 1e-9:
            extra = rng.standard_normal((k - len(picks), z.shape[1]))
            picks.extend(torch.as_tensor(extra, dtype=DTYPE))
            break
        picks.append(z[j])
        dist = torch.minimum(dist, (z - z[j]).norm(dim=1))
    return l2_normalize(torch.stack(picks))


def train_embedder(graphs: Sequence[Graph], cfg: EmbedderConfig, seed: int) -> tuple[Embedder, list[dict]]:
    """Fit encoder, decoder and prototypes on ID graphs; return the model and per-epoch log."""
    cfg.validate()
    if not graphs:
        raise ValidationError("cannot train the embedder on an empty dataset")
    graphs = list(graphs)
    model = Embedder(graphs[0].d, cfg, seed)
    init = farthest_point_prototypes(model.embed(graphs), cfg.n_prototypes, np_rng(seed, "embedder", "fps"))
    with torch.no_grad():
        model.prototypes.vectors.copy_(init)

    aug = AugmentationConfig(cfg.edge_drop_p, cfg.feat_mask_p)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    noise_gen = torch_gen(seed, "embedder", "noise")
    history = []
    for epoch in range(cfg.epochs):
        rng = np_rng(seed, "embedder", "epoch", epoch)
        order = rng.permutation(len(graphs))
        sums = dict.fromkeys(("L_DC", "L_PC", "L_IPS", "L_recon", "L_total"), 0.0)
        steps = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [graphs[i] for i in order[start:start + cfg.batch_size]]
            view1 = collate([augment(g, aug, rng) for g in batch])
            view2 = collate([augment(g, aug, rng) for g in batch])
            clean = collate(batch)
            noise = model.decoder.sample_noise(len(batch), clean.adjacency.shape[1], noise_gen)
            losses = objective(model, view1, view2, clean, noise, cfg)
            for name, value in losses.items():
                check_finite(f"embedder loss {name}", value)
            opt.zero_grad()
            losses["L_total"].backward()
            opt.step()
            model.prototypes.renormalize()
            for name, value in losses.items():
                sums[name] += float(value.detach())
            steps += 1
        row = {"epoch": epoch, **{k: v / steps for k, v in sums.items()}}
        history.append(row)
        log.debug("embedder epoch %d total %.4f", epoch, row["L_total"])
    return model, history


def embedder_state(model: Embedder) -> dict:
    return {"feat_dim": model.feat_dim, "config": asdict(model.cfg)}


def cluster_purity(assignments: Sequence[int], groups: Sequence[str]) -> float:
    """Fraction of points whose cluster's majority group matches their own group."""
    assignments = np.asarray(assignments)
    groups = np.asarray(groups)
    hits = 0
    for c in np.unique(assignments):
        _, counts = np.unique(groups[assignments == c], return_counts=True)
        hits += counts.max()
    return hits / len(groups)
