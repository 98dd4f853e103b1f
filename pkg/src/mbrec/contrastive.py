"""Cross-behavior contrastive objective.

For a behavior pair (k, k') the two views of the same user form the
positive; sampled other users under view k' are negatives. Per-anchor
loss is -log softmax of the positive similarity against the negatives,
with a temperature; the pair loss sums anchors so per-user values stay
available for downstream weighting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops
from .encoder import EmbeddingState
from .errors import ConfigError, ShapeError

log = logging.getLogger(__name__)


@dataclass
class ContrastiveBatch:
    """Anchors, shared negative pool, and the similarity settings."""

    anchors: np.ndarray
    negatives: np.ndarray
    temperature: float = 0.1
    phi: str = "cosine"

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=np.int64).ravel()
        self.negatives = np.asarray(self.negatives, dtype=np.int64).ravel()
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if len(self.negatives) < 1:
            raise ConfigError("need at least one negative sample")
        if len(self.anchors) == 0:
            raise ConfigError("empty anchor set")
        if len(np.unique(self.anchors)) != len(self.anchors):
            raise ConfigError("anchor users must be unique within a batch")
        if self.phi not in ("cosine", "dot"):
            raise ConfigError(f"unknown similarity {self.phi!r}")


@dataclass
class PairLoss:
    """Loss of one behavior pair: scalar total plus the per-anchor vector."""

    pair: tuple[int, int]
    total: Tensor
    per_user: Tensor


def infonce_pair(view_a: Tensor, view_b: Tensor, batch: ContrastiveBatch,
                 pair: tuple[int, int] = (0, 0)) -> PairLoss:
    """Contrast each anchor's view-a embedding against its own view-b
    embedding (positive) and the pooled negative users' view-b rows.

    The denominator includes the positive itself, so with similarities
    all equal the per-anchor loss is log(S + 1).
    """
    if view_a.shape != view_b.shape:
        raise ShapeError(f"view tables disagree: {view_a.shape} vs {view_b.shape}")
    a = ops.take_rows(view_a, batch.anchors)
    p = ops.take_rows(view_b, batch.anchors)
    n = ops.take_rows(view_b, batch.negatives)
    if batch.phi == "cosine":
        a = ops.l2_normalize(a)
        p = ops.l2_normalize(p)
        n = ops.l2_normalize(n)
    pos = ops.sum_(ops.mul(a, p), axis=1, keepdims=True)
    neg = ops.matmul(a, ops.transpose(n))
    logits = ops.scalar_mul(ops.concat([pos, neg], axis=1),
                            1.0 / batch.temperature)
    per_user = ops.sub(ops.logsumexp_rows(logits),
                       ops.reshape(ops.scalar_mul(pos, 1.0 / batch.temperature),
                                   (len(batch.anchors),)))
    return PairLoss(pair=pair, total=ops.sum_(per_user), per_user=per_user)


def all_pairs_losses(state: EmbeddingState, target: int,
                     batch: ContrastiveBatch) -> list[PairLoss]:
    """One PairLoss per auxiliary behavior k' against the target k,
    sharing the batch's anchors and negative pool across pairs.

    A single-behavior dataset has no pairs; that degrades to an empty
    list with a warning (training then rests on the ranking loss alone).
    """
    K = state.num_behaviors
    if K < 2:
        log.warning("only one behavior present; contrastive term is empty")
        return []
    tgt = state.beh_final_user[target]
    out = []
    for k in range(K):
        if k == target:
            continue
        out.append(infonce_pair(tgt, state.beh_final_user[k], batch,
                                pair=(target, k)))
    return out
