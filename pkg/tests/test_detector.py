import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from pgos.detector import Detector, DetectorConfig, detector_loss, evaluate_auc, reg_loss, score, train_detector
from pgos.embedder import Embedder, EmbedderConfig, PrototypeSet
from pgos.graphs import collate
from pgos.utils import DTYPE, ValidationError

from conftest import random_graph

SMALL = EmbedderConfig(dim=4, hidden=8, n_prototypes=3)


def pair_count_auc(id_scores, ood_scores):
    total = 0.0
    for o in ood_scores:
        for i in id_scores:
            total += 1.0 if o > i else 0.5 if o == i else 0.0
    return total / (len(id_scores) * len(ood_scores))


@pytest.fixture
def model():
    return Embedder(2, SMALL, seed=0)


def graphs(seed, count, p=0.3):
    rng = np.random.default_rng(seed)
    return [random_graph(rng, int(rng.integers(4, 9)), d=2, p=p) for _ in range(count)]


# --------------------------------------------------------------- scores


def test_score_zero_at_prototype_and_brute_force(model):
    gs = graphs(0, 10)
    z = model.embed(gs)
    protos = torch.cat([z[:1], model.prototypes.vectors.detach()[1:]])
    det = Detector(model.encoder, PrototypeSet(protos))
    assert score(gs[0], det) == pytest.approx(0.0, abs=1e-7)
    s = det.scores(gs)
    brute = [min(math.dist(zi.tolist(), c.tolist()) for c in protos) for zi in z]
    np.testing.assert_allclose(s, brute, atol=1e-12)
    assert np.all(s >= s[0])


def test_score_permutation_invariant(model):
    det = Detector(model.encoder, model.prototypes)
    g = graphs(1, 1)[0]
    perm = np.random.default_rng(0).permutation(g.n)
    assert abs(score(g, det) - score(g.permute(perm), det)) < 1e-9


# -------------------------------------------------------------- reg loss


def test_reg_loss_values():
    m, s = 0.7, 0.2
    t = lambda x: torch.tensor(x, dtype=DTYPE)  # noqa: E731
    assert float(reg_loss(t(m), m, s)) == pytest.approx(math.log(2), abs=1e-15)
    assert float(reg_loss(t(m - s), m, s)) == pytest.approx(-math.log(1 / (1 + math.e)), abs=1e-12)
    assert float(reg_loss(t(m - s), m, s)) == pytest.approx(1.3133, abs=1e-4)
    assert float(reg_loss(t(1e4), m, s)) < 1e-12


def test_reg_loss_strictly_decreasing():
    h = torch.linspace(-3, 3, 1000, dtype=DTYPE)
    assert torch.all(torch.diff(reg_loss(h, 0.5, 0.3)) < 0)


def test_outlier_term_does_not_move_prototypes(model):
    det = Detector(model.encoder, model.prototypes, margin=0.5, scale=0.1)
    cfg = DetectorConfig(beta=1.0, contrastive_weight=0.0)
    batch, pseudo = collate(graphs(0, 4)), collate(graphs(1, 4))
    _, _, with_reg = detector_loss(det, batch, None, pseudo, cfg)
    _, _, without = detector_loss(det, batch, None, None, cfg)
    g1 = torch.autograd.grad(with_reg, det.prototypes.vectors)[0]
    g2 = torch.autograd.grad(without, det.prototypes.vectors)[0]
    assert torch.equal(g1, g2)


# ------------------------------------------------------------------- AUC


def test_auc_examples():
    assert evaluate_auc([0.1, 0.2], [0.5, 0.9]) == 1.0
    assert evaluate_auc([0.3] * 4, [0.3] * 5) == 0.5
    assert evaluate_auc([0.9], [0.1]) == 0.0
    with pytest.raises(ValidationError):
        evaluate_auc([], [1.0])


@pytest.mark.parametrize("seed", range(5))
def test_auc_matches_pair_count(seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 30, 200) / 10.0
    b = rng.integers(5, 35, 200) / 10.0
    assert evaluate_auc(a, b) == pair_count_auc(a, b)


@given(seed=st.integers(0, 10_000))
def test_auc_invariances(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=30), rng.normal(0.5, 1, size=40)
    auc = evaluate_auc(a, b)
    assert evaluate_auc(np.exp(a), np.exp(b)) == auc
    assert evaluate_auc(3 * a + 1, 3 * b + 1) == auc
    assert abs(evaluate_auc(a, b) + evaluate_auc(b, a) - 1.0) < 1e-12


# -------------------------------------------------------------- training


def test_beta_zero_is_bitwise_inert(model):
    cfg = DetectorConfig(beta=0.0, epochs=3, lr=1e-3)
    id_g, pseudo = graphs(2, 12), graphs(3, 6, p=0.8)
    d1, h1 = train_detector(id_g, pseudo, model, cfg, seed=0)
    d2, h2 = train_detector(id_g, [], model, cfg, seed=0)
    assert h1 == h2
    for p, q in zip(d1.parameters(), d2.parameters()):
        assert torch.equal(p, q)


def test_training_separates_pseudo_outliers(model):
    id_g, pseudo = graphs(4, 30, p=0.2), graphs(5, 30, p=0.9)
    det, hist = train_detector(id_g, pseudo, model, DetectorConfig(epochs=15, lr=1e-2), seed=0)
    assert det.scores(id_g).mean() < det.scores(pseudo).mean()
    assert set(hist[0]) == {"epoch", "L_ID", "L_reg", "L_total", "margin", "scale"}


def test_detector_errors(model):
    with pytest.raises(ValidationError):
        train_detector([], graphs(0, 2), model, DetectorConfig(), 0)
    with pytest.raises(ValidationError):
        DetectorConfig(beta=-1).validate()
    with pytest.raises(ValidationError):
        Detector(model.encoder, model.prototypes, beta=-0.1)
