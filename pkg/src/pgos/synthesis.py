"""Decode latent points into pseudo-OOD graphs; baseline latent samplers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .embedder import Decoder
from .env import GlobalBoundary, project
from .graphs import OOD, Graph, GraphDataset
from .utils import ValidationError, derive_seed, np_rng


@dataclass
class SynthConfig:
    binarize: str = "bernoulli"  # or "threshold"
    edge_threshold: float = 0.5
    eps_keep: float = 0.05
    burn_in: float = 0.25
    sigma_gaussian: float | None = None  # None: 0.1 * R_max

    def validate(self) -> None:
        if not 0.0 < self.edge_threshold < 1.0:
            raise ValidationError("synth.edge_threshold must lie in (0, 1)")
        if self.binarize not in ("bernoulli", "threshold"):
            raise ValidationError("synth.binarize must be 'bernoulli' or 'threshold'")
        if self.eps_keep < 0 or not 0.0 <= self.burn_in < 1.0:
            raise ValidationError("synth.eps_keep must be >= 0 and synth.burn_in in [0, 1)")
        if self.sigma_gaussian is not None and self.sigma_gaussian < 0:
            raise ValidationError("synth.sigma_gaussian must be >= 0")


def synthesize_graphs(latents, decoder: Decoder, node_histogram: Mapping[int, int],
                      cfg: SynthConfig, seed: int, origin: str = "pgos") -> GraphDataset:
    """One graph per latent, node count drawn from the ID histogram.

    Edges are drawn as independent Bernoulli(p_uv) by default; ``threshold``
    mode keeps pairs with p_uv > ``edge_threshold`` instead. Thresholding a
    decoder calibrated on sparse graphs (all p_uv < 0.5) yields empty graphs.
    """
    cfg.validate()
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or len(latents) == 0:
        raise ValidationError("synthesize_graphs needs a non-empty (m, D) latent array")
    sizes = np.array(sorted(node_histogram), dtype=int)
    weights = np.array([node_histogram[n] for n in sizes], dtype=np.float64)
    weights /= weights.sum()
    graphs = []
    for i, z in enumerate(latents):
        rng = np_rng(seed, "synth", i)
        n = int(rng.choice(sizes, p=weights))
        probs, feats = decoder.decode(z, n, derive_seed(seed, "synth-noise", i))
        if cfg.binarize == "bernoulli":
            adj = (rng.random(probs.shape) < probs).astype(np.uint8)
        else:
            adj = (probs > cfg.edge_threshold).astype(np.uint8)
        adj = np.triu(adj, 1)
        graphs.append(Graph(adj + adj.T, feats))
    return GraphDataset(graphs=graphs, labels=[OOD] * len(graphs), name=f"pseudo-{origin}",
                        origin=origin)


def gaussian_midpoint_sampler(protos, boundary: GlobalBoundary, count: int, sigma: float,
                              seed: int) -> np.ndarray:
    """Midpoint of two distinct random prototypes plus isotropic noise, projected into the ball."""
    protos = np.asarray(protos, dtype=np.float64)
    if len(protos) < 2:
        raise ValidationError("gaussian sampler needs at least two prototypes")
    rng = np_rng(seed, "gaussian-sampler")
    out = np.empty((count, protos.shape[1]))
    for i in range(count):
        a, b = rng.choice(len(protos), size=2, replace=False)
        point = 0.5 * (protos[a] + protos[b]) + sigma * rng.standard_normal(protos.shape[1])
        out[i] = project(point, boundary)
    return out


def uniform_boundary_sampler(boundary: GlobalBoundary, count: int, seed: int) -> np.ndarray:
    """Uniform samples in the ball of radius R_max around the global centroid."""
    rng = np_rng(seed, "uniform-sampler")
    dim = len(boundary.center)
    directions = rng.standard_normal((count, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = boundary.r_max * rng.random(count) ** (1.0 / dim)
    return boundary.center + directions * radii[:, None]
