"""Latent-space MDP: cluster statistics, repulsion reward, boundary projection, target entropy."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .utils import NumericalError, ValidationError

log = logging.getLogger(__name__)

BOUNDARY_TOL = 1e-12


class DegenerateBoundaryError(ValidationError):
    pass


@dataclass(frozen=True)
class ClusterStats:
    centroids: np.ndarray  # (M, D)
    radii: np.ndarray  # (M,)
    counts: np.ndarray  # (M,)
    indices: np.ndarray  # prototype index of each retained cluster

    def __len__(self) -> int:
        return len(self.radii)

    @property
    def mean_radius(self) -> float:
        return float(self.radii.mean())


@dataclass(frozen=True)
class GlobalBoundary:
    center: np.ndarray
    r_max: float


@dataclass
class EnvConfig:
    delta_multiplier: float = 0.5
    max_steps: int = 32
    action_scale: float | None = None  # None: 0.1 * R_max
    h_max: float | None = None  # None: 0.5 * D

    def validate(self) -> None:
        if self.delta_multiplier <= 0 or self.max_steps < 1:
            raise ValidationError("env.delta_multiplier and env.max_steps must be positive")
        for name in ("action_scale", "h_max"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValidationError(f"env.{name} must be positive")

    def resolved(self, boundary: GlobalBoundary) -> "EnvConfig":
        dim = len(boundary.center)
        return EnvConfig(
            delta_multiplier=self.delta_multiplier,
            max_steps=self.max_steps,
            action_scale=self.action_scale if self.action_scale is not None else 0.1 * boundary.r_max,
            h_max=self.h_max if self.h_max is not None else 0.5 * dim,
        )


@dataclass
class EnvState:
    position: np.ndarray
    t: int = 0


def compute_cluster_stats(embeddings, protos) -> tuple[ClusterStats, GlobalBoundary]:
    """Per-cluster centroid/radius under nearest-prototype assignment, plus the global ball."""
    emb = np.asarray(embeddings, dtype=np.float64)
    protos = np.asarray(protos, dtype=np.float64)
    if emb.ndim != 2 or len(emb) == 0:
        raise ValidationError("compute_cluster_stats needs at least one embedding")
    assign = np.argmax(emb @ protos.T, axis=1)
    centroids, radii, counts, indices = [], [], [], []
    for k in range(len(protos)):
        members = emb[assign == k]
        if len(members) == 0:
            log.warning("prototype %d has no members; dropped from cluster stats", k)
            continue
        mu = members.mean(axis=0)
        centroids.append(mu)
        radii.append(np.linalg.norm(members - mu, axis=1).max())
        counts.append(len(members))
        indices.append(k)
    center = emb.mean(axis=0)
    r_max = float(np.linalg.norm(emb - center, axis=1).max())
    if r_max <= 0:
        raise DegenerateBoundaryError("all embeddings coincide; R_max must be > 0")
    stats = ClusterStats(np.array(centroids), np.array(radii), np.array(counts), np.array(indices))
    return stats, GlobalBoundary(center, r_max)


def _length_scale(stats: ClusterStats, boundary: GlobalBoundary | None) -> float:
    rbar = stats.mean_radius
    if rbar > 0:
        return rbar
    if boundary is None:
        raise DegenerateBoundaryError("mean cluster radius is zero and no boundary given for fallback")
    log.info("mean cluster radius is zero; falling back to R_max / 10")
    return boundary.r_max / 10.0


def margins(stats: ClusterStats, cfg: EnvConfig, boundary: GlobalBoundary | None = None) -> np.ndarray:
    """Safety margin per cluster; zero-radius clusters borrow the mean radius."""
    base = np.where(stats.radii > 0, stats.radii, _length_scale(stats, boundary))
    return cfg.delta_multiplier * base


def reward(s, stats: ClusterStats, cfg: EnvConfig, boundary: GlobalBoundary | None = None):
    """Repulsion reward; ``s`` may be one point (D,) or a stack (..., D)."""
    if len(stats) == 0:
        raise ValidationError("reward needs at least one cluster")
    s = np.asarray(s, dtype=np.float64)
    d = np.linalg.norm(s[..., None, :] - stats.centroids, axis=-1)
    delta = margins(stats, cfg, boundary)
    inside = d < stats.radii + delta
    pen = np.where(inside, -((1.0 - (d - stats.radii) / delta) ** 2), 0.0)
    out = pen.sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def project(s, boundary: GlobalBoundary) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    offset = s - boundary.center
    dist = np.linalg.norm(offset)
    if dist <= boundary.r_max + BOUNDARY_TOL:
        return s
    return boundary.center + boundary.r_max * offset / dist


def target_entropy(s, stats: ClusterStats, cfg: EnvConfig, boundary: GlobalBoundary | None = None):
    """Gaussian bump in distance-to-nearest-centroid, peaking at the mean radius."""
    s = np.asarray(s, dtype=np.float64)
    rbar = _length_scale(stats, boundary)
    d_min = np.linalg.norm(s[..., None, :] - stats.centroids, axis=-1).min(axis=-1)
    out = cfg.h_max * np.exp(-((d_min - rbar) ** 2) / (2.0 * rbar**2))
    return float(out) if out.ndim == 0 else out


def reset(protos, boundary: GlobalBoundary, rng: np.random.Generator) -> EnvState:
    protos = np.asarray(protos, dtype=np.float64)
    if len(protos) < 2:
        raise ValidationError("reset needs at least two prototypes")
    a, b = rng.choice(len(protos), size=2, replace=False)
    return EnvState(project(0.5 * (protos[a] + protos[b]), boundary), 0)


def clip_norm(a: np.ndarray, max_norm: float) -> np.ndarray:
    norm = np.linalg.norm(a)
    return a if norm <= max_norm else a * (max_norm / norm)


@dataclass
class LatentEnv:
    """Bundles cluster stats, boundary, prototypes and a resolved config."""

    stats: ClusterStats
    boundary: GlobalBoundary
    protos: np.ndarray
    cfg: EnvConfig = field(default_factory=EnvConfig)

    def __post_init__(self):
        self.cfg.validate()
        self.cfg = self.cfg.resolved(self.boundary)
        self.protos = np.asarray(self.protos, dtype=np.float64)

    @property
    def dim(self) -> int:
        return len(self.boundary.center)

    def reset(self, rng: np.random.Generator) -> EnvState:
        return reset(self.protos, self.boundary, rng)

    def reward(self, s):
        return reward(s, self.stats, self.cfg, self.boundary)

    def target_entropy(self, s):
        return target_entropy(s, self.stats, self.cfg, self.boundary)

    def step(self, state: EnvState, action) -> tuple[EnvState, float, bool]:
        action = np.asarray(action, dtype=np.float64)
        if not np.all(np.isfinite(action)):
            raise NumericalError("non-finite action")
        move = clip_norm(action, self.cfg.action_scale)
        nxt = EnvState(project(state.position + move, self.boundary), state.t + 1)
        return nxt, self.reward(nxt.position), nxt.t >= self.cfg.max_steps


def stats_to_json(stats: ClusterStats, boundary: GlobalBoundary) -> dict:
    return {
        "clusters": [
            {"index": int(k), "centroid": mu.tolist(), "radius": float(r), "count": int(c)}
            for k, mu, r, c in zip(stats.indices, stats.centroids, stats.radii, stats.counts)
        ],
        "mu_g": boundary.center.tolist(),
        "r_max": boundary.r_max,
        "r_bar": stats.mean_radius,
    }


def stats_from_json(blob: dict) -> tuple[ClusterStats, GlobalBoundary]:
    clusters = blob["clusters"]
    stats = ClusterStats(
        centroids=np.array([c["centroid"] for c in clusters], dtype=np.float64),
        radii=np.array([c["radius"] for c in clusters], dtype=np.float64),
        counts=np.array([c["count"] for c in clusters]),
        indices=np.array([c["index"] for c in clusters]),
    )
    return stats, GlobalBoundary(np.array(blob["mu_g"], dtype=np.float64), float(blob["r_max"]))
