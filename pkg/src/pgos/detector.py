"""Prototype-distance OOD detector fine-tuned with pseudo-outlier regularization."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from scipy.stats import rankdata
from torch.nn import functional as F

from .embedder import Embedder, GCNEncoder, PrototypeSet, loss_dc, loss_ips, loss_pc
from .graphs import AugmentationConfig, Graph, GraphBatch, augment, collate
from .utils import ValidationError, check_finite, np_rng

log = logging.getLogger(__name__)

MIN_SCALE = 1e-6


@dataclass
class DetectorConfig:
    beta: float = 0.5
    epochs: int = 50
    lr: float = 1e-4
    contrastive_weight: float = 0.1
    batch_size: int = 32

    def validate(self) -> None:
        if self.beta < 0 or self.contrastive_weight < 0:
            raise ValidationError("detector.beta and detector.contrastive_weight must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValidationError("detector.epochs >= 0, batch_size >= 1 and lr > 0 required")


class Detector(torch.nn.Module):
    """Scores a graph by its embedding's distance to the nearest prototype."""

    def __init__(self, encoder: GCNEncoder, prototypes: PrototypeSet, beta: float = 0.5,
                 margin: float = 0.0, scale: float = 1.0):
        super().__init__()
        if beta < 0:
            raise ValidationError("beta must be >= 0")
        self.encoder = encoder
        self.prototypes = prototypes
        self.beta = beta
        self.margin = margin
        self.scale = scale

    def distances(self, batch: GraphBatch, detach_prototypes: bool = False) -> torch.Tensor:
        _, z = self.encoder(batch)
        protos = self.prototypes.vectors
        if detach_prototypes:
            protos = protos.detach()
        return torch.cdist(z, protos).min(dim=1).values

    def scores(self, graphs: Sequence[Graph], batch_size: int = 256) -> np.ndarray:
        with torch.no_grad():
            parts = [self.distances(collate(graphs[i:i + batch_size]))
                     for i in range(0, len(graphs), batch_size)]
        return torch.cat(parts).numpy()

    def calibrate(self, id_graphs: Sequence[Graph]) -> None:
        s = self.scores(id_graphs)
        self.margin = float(s.mean() + s.std())
        self.scale = max(float(s.std()), MIN_SCALE)


def score(g: Graph, det: Detector) -> float:
    return float(det.scores([g])[0])


def reg_loss(h: torch.Tensor, margin: float, scale: float) -> torch.Tensor:
    """-log sigmoid((h - margin) / scale): large when an outlier looks in-distribution."""
    return F.softplus(-(h - margin) / scale)


def detector_loss(det: Detector, batch: GraphBatch, views: tuple[GraphBatch, GraphBatch] | None,
                  pseudo: GraphBatch | None, cfg: DetectorConfig):
    """Returns (L_ID, L_reg, total) for one mini-batch; ``views`` feed the contrastive term."""
    protos = det.prototypes.vectors
    tau = det.prototypes.tau
    l_id = det.distances(batch).mean()
    if views is not None and cfg.contrastive_weight > 0:
        _, z1 = det.encoder(views[0])
        _, z2 = det.encoder(views[1])
        pco = loss_dc(z1, z2, protos, tau) + loss_pc(z1, z2, protos, tau) + loss_ips(protos)
        l_id = l_id + cfg.contrastive_weight * pco
    l_reg = torch.zeros((), dtype=l_id.dtype)
    total = l_id
    if pseudo is not None and cfg.beta > 0:
        h_out = det.distances(pseudo, detach_prototypes=True)
        l_reg = reg_loss(h_out, det.margin, det.scale).mean()
        total = total + cfg.beta * l_reg
    return l_id, l_reg, total


def train_detector(id_graphs: Sequence[Graph], pseudo_graphs: Sequence[Graph], warm_start: Embedder,
                   cfg: DetectorConfig, seed: int) -> tuple[Detector, list[dict]]:
    """Minimize mean ID distance + weighted contrastive term + beta * mean outlier penalty.

    Margin and scale are re-estimated from ID scores at the start of every
    epoch and once more at the end. With ``beta == 0`` or no pseudo-outliers
    the outlier branch is skipped entirely, so the result matches a plain run.
    """
    cfg.validate()
    id_graphs, pseudo_graphs = list(id_graphs), list(pseudo_graphs)
    if not id_graphs:
        raise ValidationError("train_detector needs in-distribution graphs")
    det = Detector(copy.deepcopy(warm_start.encoder), copy.deepcopy(warm_start.prototypes), cfg.beta)
    ecfg = warm_start.cfg
    aug = AugmentationConfig(ecfg.edge_drop_p, ecfg.feat_mask_p)
    use_outliers = cfg.beta > 0 and len(pseudo_graphs) > 0
    opt = torch.optim.Adam(det.parameters(), lr=cfg.lr)
    history = []
    for epoch in range(cfg.epochs):
        det.calibrate(id_graphs)
        rng = np_rng(seed, "detector", "id", epoch)
        order = rng.permutation(len(id_graphs))
        if use_outliers:
            ood_rng = np_rng(seed, "detector", "ood", epoch)
            ood_order = ood_rng.permutation(len(pseudo_graphs))
        sums = {"L_ID": 0.0, "L_reg": 0.0, "L_total": 0.0}
        steps = 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [id_graphs[i] for i in order[start:start + cfg.batch_size]]
            views = None
            if cfg.contrastive_weight > 0:
                views = (collate([augment(g, aug, rng) for g in batch]),
                         collate([augment(g, aug, rng) for g in batch]))
            pseudo = None
            if use_outliers:
                idx = np.take(ood_order, np.arange(b * cfg.batch_size, (b + 1) * cfg.batch_size),
                              mode="wrap")
                pseudo = collate([pseudo_graphs[i] for i in idx])
            l_id, l_reg, total = detector_loss(det, collate(batch), views, pseudo, cfg)
            check_finite("detector loss", total)
            opt.zero_grad()
            total.backward()
            opt.step()
            det.prototypes.renormalize()
            sums["L_ID"] += float(l_id.detach())
            sums["L_reg"] += float(l_reg.detach())
            sums["L_total"] += float(total.detach())
            steps += 1
        history.append({"epoch": epoch, **{k: v / steps for k, v in sums.items()},
                        "margin": det.margin, "scale": det.scale})
    det.calibrate(id_graphs)
    return det, history


def evaluate_auc(scores_id, scores_ood) -> float:
    """P(OOD score > ID score) with ties counted one half, via average ranks."""
    scores_id = np.asarray(scores_id, dtype=np.float64).ravel()
    scores_ood = np.asarray(scores_ood, dtype=np.float64).ravel()
    if len(scores_id) == 0 or len(scores_ood) == 0:
        raise ValidationError("AUC needs at least one ID and one OOD score")
    ranks = rankdata(np.concatenate([scores_id, scores_ood]), method="average")
    n_id, n_ood = len(scores_id), len(scores_ood)
    u = ranks[n_id:].sum() - n_ood * (n_ood + 1) / 2.0
    return float(u / (n_id * n_ood))
