"""Cross-behavior contrastive loss against brute-force oracles."""

import logging

import numpy as np
import pytest

from mbrec.autodiff import Tape, Tensor, recording
from mbrec.contrastive import (ContrastiveBatch, all_pairs_losses,
                               infonce_pair)
from mbrec.encoder import EmbeddingState
from mbrec.errors import ConfigError, ShapeError


def brute_force(va, vb, anchors, negatives, tau, phi):
    """Direct per-anchor computation with python loops."""

    def norm(v):
        n = np.linalg.norm(v)
        return v / n if n >= 1e-8 else np.zeros_like(v)

    losses = []
    for u in anchors:
        a = norm(va[u]) if phi == "cosine" else va[u]
        p = norm(vb[u]) if phi == "cosine" else vb[u]
        sims = [float(a @ p)]
        for m in negatives:
            nv = norm(vb[m]) if phi == "cosine" else vb[m]
            sims.append(float(a @ nv))
        sims = np.array(sims) / tau
        # stable log-sum-exp
        mx = sims.max()
        lse = mx + np.log(np.exp(sims - mx).sum())
        losses.append(lse - sims[0])
    return np.array(losses)


@pytest.mark.parametrize("phi", ["cosine", "dot"])
def test_matches_brute_force(phi):
    rng = np.random.default_rng(0)
    va = rng.normal(size=(12, 5))
    vb = rng.normal(size=(12, 5))
    batch = ContrastiveBatch(anchors=np.array([0, 3, 7, 11]),
                             negatives=np.array([1, 2, 4, 5, 6]),
                             temperature=0.2, phi=phi)
    with recording(Tape()):
        out = infonce_pair(Tensor(va), Tensor(vb), batch, pair=(0, 1))
    want = brute_force(va, vb, batch.anchors, batch.negatives, 0.2, phi)
    assert np.abs(out.per_user.data - want).max() < 1e-10
    assert abs(out.total.item() - want.sum()) < 1e-10
    assert out.pair == (0, 1)


def test_identical_embeddings_closed_form():
    # one shared embedding for every user -> every similarity equal ->
    # per-anchor loss is exactly log(S + 1)
    row = np.array([0.3, -1.2, 0.7])
    va = np.tile(row, (10, 1))
    for S in (1, 4, 9):
        batch = ContrastiveBatch(anchors=np.array([0]),
                                 negatives=np.arange(1, 1 + S),
                                 temperature=0.37, phi="cosine")
        with recording(Tape()):
            out = infonce_pair(Tensor(va), Tensor(va.copy()), batch)
        assert abs(out.total.item() - np.log(S + 1)) < 1e-12


def test_per_user_sums_to_total():
    rng = np.random.default_rng(1)
    va, vb = rng.normal(size=(9, 4)), rng.normal(size=(9, 4))
    batch = ContrastiveBatch(anchors=np.array([2, 5, 8]),
                             negatives=np.array([0, 1, 3]))
    with recording(Tape()):
        out = infonce_pair(Tensor(va), Tensor(vb), batch)
    assert abs(out.total.item() - out.per_user.data.sum()) < 1e-12
    assert out.per_user.shape == (3,)


def test_lower_temperature_sharpens():
    # positive stronger than negatives: shrinking tau should shrink loss
    va = np.array([[1.0, 0.0], [0.2, 0.9], [-0.5, 0.4]])
    vb = np.array([[0.9, 0.1], [0.1, 1.0], [-0.4, 0.5]])
    batch_hi = ContrastiveBatch(anchors=np.array([0]),
                                negatives=np.array([1, 2]), temperature=1.0)
    batch_lo = ContrastiveBatch(anchors=np.array([0]),
                                negatives=np.array([1, 2]), temperature=0.05)
    with recording(Tape()):
        hi = infonce_pair(Tensor(va), Tensor(vb), batch_hi)
        lo = infonce_pair(Tensor(va), Tensor(vb), batch_lo)
    assert lo.total.item() < hi.total.item()


def test_batch_validation():
    with pytest.raises(ConfigError):
        ContrastiveBatch(anchors=np.array([0, 0]), negatives=np.array([1]))
    with pytest.raises(ConfigError):
        ContrastiveBatch(anchors=np.array([0]), negatives=np.array([]))
    with pytest.raises(ConfigError):
        ContrastiveBatch(anchors=np.array([]), negatives=np.array([1]))
    with pytest.raises(ConfigError):
        ContrastiveBatch(anchors=np.array([0]), negatives=np.array([1]),
                         temperature=0.0)
    with pytest.raises(ConfigError):
        ContrastiveBatch(anchors=np.array([0]), negatives=np.array([1]),
                         phi="euclid")


def test_view_shape_mismatch():
    batch = ContrastiveBatch(anchors=np.array([0]), negatives=np.array([1]))
    with pytest.raises(ShapeError):
        with recording(Tape()):
            infonce_pair(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 4))),
                         batch)


def fake_state(tables):
    """EmbeddingState stub carrying only behavior-final user tables."""
    z = Tensor(np.zeros_like(tables[0].data))
    return EmbeddingState(layer_user=[], layer_item=[], beh_user=[],
                          beh_item=[], final_user=z, final_item=z,
                          beh_final_user=tables, beh_final_item=tables)


def test_all_pairs_cover_auxiliaries():
    rng = np.random.default_rng(2)
    tables = [Tensor(rng.normal(size=(8, 3))) for _ in range(4)]
    batch = ContrastiveBatch(anchors=np.array([1, 6]),
                             negatives=np.array([0, 2, 3]))
    with recording(Tape()):
        losses = all_pairs_losses(fake_state(tables), target=2, batch=batch)
    assert [pl.pair for pl in losses] == [(2, 0), (2, 1), (2, 3)]


def test_single_behavior_degrades_with_warning(caplog):
    rng = np.random.default_rng(3)
    tables = [Tensor(rng.normal(size=(6, 3)))]
    batch = ContrastiveBatch(anchors=np.array([0]), negatives=np.array([1]))
    with caplog.at_level(logging.WARNING, logger="mbrec.contrastive"):
        with recording(Tape()):
            losses = all_pairs_losses(fake_state(tables), target=0,
                                      batch=batch)
    assert losses == []
    assert any("one behavior" in r.message for r in caplog.records)
