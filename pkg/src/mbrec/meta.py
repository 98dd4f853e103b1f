"""Customized loss weighting driven by meta knowledge.

Each per-sample loss value is paired with the embeddings it came from
to form two descriptor matrices: a concatenation view (scaled loss
column broadcast to width d, then the two embeddings) and a scaling
view (loss value multiplying the concatenated embeddings). A small
transform with a PReLU head maps each view to a scalar; their sum is
the sample's non-negative-at-init weight.

Heads start at zero weight matrices with bias 0.5, so every sample
begins at weight 1.0 and the bilevel updates move weights from there.
Head slopes are activation constants, not trained parameters; a slope
of zero turns the heads into ReLUs and keeps every weight non-negative,
which rules out loss-sign flips during the bilevel loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops
from .errors import ConfigError, ShapeError


@dataclass
class MetaNetParams:
    """Two linear+PReLU heads, one per descriptor view."""

    w1: Tensor
    b1: Tensor
    s1: Tensor
    w2: Tensor
    b2: Tensor
    s2: Tensor
    gamma: float = 10.0
    dropout: float = 0.2

    @classmethod
    def init(cls, dim: int, gamma: float = 10.0, dropout: float = 0.2,
             slope: float = 0.25) -> "MetaNetParams":
        if dim <= 0:
            raise ConfigError(f"dim must be positive, got {dim}")
        if not (0.0 <= dropout < 1.0):
            raise ConfigError(f"dropout must be in [0, 1), got {dropout}")
        if slope < 0.0:
            raise ConfigError(f"slope must be non-negative, got {slope}")
        return cls(
            w1=ops.zeros((3 * dim, 1), requires_grad=True),
            b1=Tensor(np.full(1, 0.5), requires_grad=True),
            s1=Tensor(slope),
            w2=ops.zeros((2 * dim, 1), requires_grad=True),
            b2=Tensor(np.full(1, 0.5), requires_grad=True),
            s2=Tensor(slope),
            gamma=gamma, dropout=dropout)

    def named(self) -> dict[str, Tensor]:
        return {"meta_w1": self.w1, "meta_b1": self.b1,
                "meta_w2": self.w2, "meta_b2": self.b2}

    def tensors(self) -> list[Tensor]:
        return list(self.named().values())


@dataclass
class MetaKnowledge:
    """The two descriptor matrices for a batch of samples."""

    z1: Tensor
    z2: Tensor


def encode_meta_knowledge(per_sample_loss: Tensor, own_rows: Tensor,
                          base_rows: Tensor, gamma: float) -> MetaKnowledge:
    """Build descriptors from a loss vector and two aligned embedding
    row blocks (the sample's behavior-specific rows and its aggregate
    rows).

    z1 = [loss * gamma broadcast to d | own | base]   (B x 3d)
    z2 = loss * [own | base]                          (B x 2d)
    """
    if per_sample_loss.ndim != 1:
        raise ShapeError(f"loss vector must be 1-D, got {per_sample_loss.shape}")
    b = per_sample_loss.shape[0]
    if own_rows.shape[0] != b or base_rows.shape[0] != b:
        raise ShapeError(
            f"descriptor rows misaligned: loss {b}, own {own_rows.shape[0]}, "
            f"base {base_rows.shape[0]}")
    if own_rows.shape[1] != base_rows.shape[1]:
        raise ShapeError("embedding widths disagree")
    d = own_rows.shape[1]
    col = ops.reshape(per_sample_loss, (b, 1))
    loss_block = ops.broadcast_to(ops.scalar_mul(col, gamma), (b, d))
    z1 = ops.concat([loss_block, own_rows, base_rows], axis=1)
    pair = ops.concat([own_rows, base_rows], axis=1)
    z2 = ops.mul(ops.broadcast_to(col, (b, 2 * d)), pair)
    return MetaKnowledge(z1=z1, z2=z2)


def weight(params: MetaNetParams, mk: MetaKnowledge,
           rng: np.random.Generator | None = None,
           training: bool = False) -> Tensor:
    """Map descriptors to one weight per sample (sum of the two heads).
    Dropout acts on descriptor rows during training only."""
    z1, z2 = mk.z1, mk.z2
    if training and params.dropout > 0.0:
        if rng is None:
            raise ConfigError("training-mode weighting needs an rng for dropout")
        z1 = ops.dropout(z1, params.dropout, rng)
        z2 = ops.dropout(z2, params.dropout, rng)
    h1 = ops.prelu(ops.add(ops.matmul(z1, params.w1), params.b1), params.s1)
    h2 = ops.prelu(ops.add(ops.matmul(z2, params.w2), params.b2), params.s2)
    b = mk.z1.shape[0]
    return ops.reshape(ops.add(h1, h2), (b,))


@dataclass
class GateParams:
    """Ablation variant: one learned scalar gate per loss stream in
    place of the sample-conditioned meta network."""

    gates: dict[str, Tensor]

    @classmethod
    def init(cls, keys: list[str]) -> "GateParams":
        return cls(gates={k: Tensor(1.0, requires_grad=True) for k in keys})

    def named(self) -> dict[str, Tensor]:
        return {f"gate_{k}": v for k, v in self.gates.items()}

    def tensors(self) -> list[Tensor]:
        return list(self.named().values())

    def weight(self, key: str, count: int) -> Tensor:
        return ops.broadcast_to(ops.reshape(self.gates[key], (1,)), (count,))


def weighted_total(weights: Tensor, per_sample: Tensor) -> Tensor:
    """Scalar sum of weight * loss over the batch."""
    if weights.shape != per_sample.shape:
        raise ShapeError(
            f"weights {weights.shape} do not match losses {per_sample.shape}")
    return ops.sum_(ops.mul(weights, per_sample))
