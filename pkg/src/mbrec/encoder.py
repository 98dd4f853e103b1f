"""Behavior-aware graph encoder.

Each propagation round runs one sum-aggregation pass per behavior from
the shared layer-l tables, then fuses the per-behavior messages with a
mean, a linear transform, and a PReLU. Final embeddings average the
aggregated tables over layers 0..L; behavior-specific finals average
that behavior's propagated tables over layers 1..L.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops, spmm
from .data import BehaviorGraph
from .errors import ConfigError


@dataclass
class EncoderParams:
    """Learnable state of the encoder: base embedding tables, one
    transform + PReLU slope per propagation round."""

    user0: Tensor
    item0: Tensor
    transforms: list[Tensor]
    slopes: list[Tensor]

    @classmethod
    def init(cls, num_users: int, num_items: int, dim: int, layers: int,
             rng: np.random.Generator) -> "EncoderParams":
        if dim <= 0 or layers <= 0:
            raise ConfigError(f"dim and layers must be positive, got {dim}, {layers}")
        return cls(
            user0=ops.xavier_uniform(rng, (num_users, dim)),
            item0=ops.xavier_uniform(rng, (num_items, dim)),
            transforms=[ops.xavier_uniform(rng, (dim, dim))
                        for _ in range(layers)],
            slopes=[Tensor(0.25, requires_grad=True) for _ in range(layers)],
        )

    @property
    def layers(self) -> int:
        return len(self.transforms)

    @property
    def dim(self) -> int:
        return self.user0.shape[1]

    def named(self) -> dict[str, Tensor]:
        out = {"user0": self.user0, "item0": self.item0}
        for l in range(self.layers):
            out[f"transform{l}"] = self.transforms[l]
            out[f"slope{l}"] = self.slopes[l]
        return out

    def tensors(self) -> list[Tensor]:
        return list(self.named().values())

    def clone(self) -> "EncoderParams":
        """Fresh leaf tensors with copied values (for lookahead steps)."""
        return EncoderParams(
            user0=self.user0.copy(), item0=self.item0.copy(),
            transforms=[t.copy() for t in self.transforms],
            slopes=[s.copy() for s in self.slopes])

    def replace(self, mapping: dict[str, Tensor]) -> "EncoderParams":
        """New container where ``mapping`` overrides named tensors; the
        overrides may be graph nodes (lookahead parameters)."""
        named = self.named()
        named.update(mapping)
        return EncoderParams(
            user0=named["user0"], item0=named["item0"],
            transforms=[named[f"transform{l}"] for l in range(self.layers)],
            slopes=[named[f"slope{l}"] for l in range(self.layers)])


@dataclass
class EmbeddingState:
    """All encoder outputs for one forward pass.

    ``beh_user[l][k]`` holds behavior k's propagated user table after
    round l+1 (rounds are 1-based in the math, list is 0-based).
    """

    layer_user: list[Tensor]
    layer_item: list[Tensor]
    beh_user: list[list[Tensor]]
    beh_item: list[list[Tensor]]
    final_user: Tensor
    final_item: Tensor
    beh_final_user: list[Tensor]
    beh_final_item: list[Tensor]

    @property
    def num_behaviors(self) -> int:
        return len(self.beh_final_user)


def propagate_behavior(graph: BehaviorGraph, k: int, user_tab: Tensor,
                       item_tab: Tensor, normalized: bool = True
                       ) -> tuple[Tensor, Tensor]:
    """One message-passing step over behavior k's bipartite adjacency:
    each user sums its item neighbors and vice versa."""
    ui, iu = graph.matrices(k, normalized)
    return spmm(ui, item_tab), spmm(iu, user_tab)


def aggregate_behaviors(tables: list[Tensor], transform: Tensor,
                        slope: Tensor) -> Tensor:
    """Fuse per-behavior message tables: mean over behaviors, linear
    transform, PReLU."""
    acc = tables[0]
    for t in tables[1:]:
        acc = ops.add(acc, t)
    mean = ops.scalar_mul(acc, 1.0 / len(tables))
    return ops.prelu(ops.matmul(mean, transform), slope)


def encode(graph: BehaviorGraph, params: EncoderParams,
           normalized: bool = True) -> EmbeddingState:
    """Run all propagation rounds and assemble every embedding view."""
    K = graph.num_behaviors
    L = params.layers
    layer_user = [params.user0]
    layer_item = [params.item0]
    beh_user: list[list[Tensor]] = []
    beh_item: list[list[Tensor]] = []

    for l in range(L):
        us, its = [], []
        for k in range(K):
            u_next, i_next = propagate_behavior(
                graph, k, layer_user[l], layer_item[l], normalized)
            us.append(u_next)
            its.append(i_next)
        beh_user.append(us)
        beh_item.append(its)
        layer_user.append(aggregate_behaviors(us, params.transforms[l],
                                              params.slopes[l]))
        layer_item.append(aggregate_behaviors(its, params.transforms[l],
                                              params.slopes[l]))

    def layer_mean(tabs: list[Tensor]) -> Tensor:
        acc = tabs[0]
        for t in tabs[1:]:
            acc = ops.add(acc, t)
        return ops.scalar_mul(acc, 1.0 / len(tabs))

    final_user = layer_mean(layer_user)
    final_item = layer_mean(layer_item)
    beh_final_user = [layer_mean([beh_user[l][k] for l in range(L)])
                      for k in range(K)]
    beh_final_item = [layer_mean([beh_item[l][k] for l in range(L)])
                      for k in range(K)]
    return EmbeddingState(
        layer_user=layer_user, layer_item=layer_item,
        beh_user=beh_user, beh_item=beh_item,
        final_user=final_user, final_item=final_item,
        beh_final_user=beh_final_user, beh_final_item=beh_final_item)


def export_embeddings(state: EmbeddingState, path: str) -> None:
    """Write final user and item embeddings as CSV (entity, index, dims...)."""
    with open(path, "w", encoding="utf-8") as fh:
        d = state.final_user.shape[1]
        fh.write("entity,index," + ",".join(f"d{j}" for j in range(d)) + "\n")
        for name, tab in (("user", state.final_user), ("item", state.final_item)):
            arr = tab.data
            for idx in range(arr.shape[0]):
                row = ",".join(repr(float(x)) for x in arr[idx])
                fh.write(f"{name},{idx},{row}\n")
