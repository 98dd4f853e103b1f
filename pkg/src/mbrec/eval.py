"""Leave-one-out ranking evaluation: HR@K and NDCG@K.

Each user's held-out item is ranked against sampled (default 99) or all
non-interacted items. Ties in score break toward the lower item index
so runs are exactly reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import InteractionStore, SplitAssignment
from .encoder import EmbeddingState
from .errors import ConfigError

log = logging.getLogger(__name__)


@dataclass
class RankingTask:
    """One user's candidate set; the positive sits at ``candidates[0]``."""

    user: int
    positive: int
    candidates: np.ndarray


@dataclass
class MetricReport:
    hr: float
    ndcg: float
    k: int
    protocol: str
    num_evaluated: int
    num_skipped: int
    per_user: dict[int, tuple[float, float]] = field(default_factory=dict)

    def line(self) -> str:
        return (f"HR@{self.k}={self.hr:.4f} NDCG@{self.k}={self.ndcg:.4f} "
                f"({self.protocol}, {self.num_evaluated} users, "
                f"{self.num_skipped} skipped)")


def _known_target_items(store: InteractionStore, split: SplitAssignment
                        ) -> dict[int, set[int]]:
    """Per-user target-behavior items across train, meta, and test."""
    known: dict[int, set[int]] = {}
    for arr in (split.train, split.meta):
        tgt = arr[arr[:, 2] == store.target_index]
        for u, i, _ in tgt:
            known.setdefault(int(u), set()).add(int(i))
    for u, i in split.test.items():
        known.setdefault(int(u), set()).add(int(i))
    return known


def sample_eval_negatives(store: InteractionStore, known: set[int],
                          num_negatives: int, rng: np.random.Generator
                          ) -> np.ndarray:
    """Uniform sample without replacement from items the user has no
    target-behavior interaction with. Degrades to all eligible items
    when fewer than requested exist."""
    eligible = np.setdiff1d(np.arange(store.num_items),
                            np.fromiter(known, dtype=np.int64, count=len(known)))
    if len(eligible) < num_negatives:
        log.warning("only %d eligible negatives (asked for %d); using all",
                    len(eligible), num_negatives)
        return eligible
    return rng.choice(eligible, size=num_negatives, replace=False)


def build_tasks(store: InteractionStore, split: SplitAssignment,
                protocol: str = "sampled", num_negatives: int = 99,
                seed: int = 0) -> list[RankingTask]:
    """Assemble one RankingTask per test user. Sampling is seeded per
    user so task sets are stable under any iteration order."""
    if protocol not in ("sampled", "full"):
        raise ConfigError(f"unknown protocol {protocol!r}")
    known = _known_target_items(store, split)
    tasks = []
    for u in sorted(split.test):
        pos = split.test[u]
        ku = known.get(u, {pos})
        if protocol == "sampled":
            rng = np.random.default_rng([seed, u])
            negs = sample_eval_negatives(store, ku, num_negatives, rng)
        else:
            negs = np.setdiff1d(
                np.arange(store.num_items),
                np.fromiter(ku, dtype=np.int64, count=len(ku)))
        cands = np.concatenate([[pos], negs]).astype(np.int64)
        tasks.append(RankingTask(user=u, positive=pos, candidates=cands))
    return tasks


def rank_of_positive(scores: np.ndarray, candidates: np.ndarray) -> int:
    """1-based rank of candidates[0] under descending score, ties broken
    by lower item index winning."""
    pos_score, pos_item = scores[0], candidates[0]
    better = (scores > pos_score) | ((scores == pos_score) & (candidates < pos_item))
    return int(better.sum()) + 1


def evaluate(state: EmbeddingState, store: InteractionStore,
             split: SplitAssignment, k: int = 10, protocol: str = "sampled",
             num_negatives: int = 99, seed: int = 0,
             keep_per_user: bool = False) -> MetricReport:
    """Score every test user's candidates with the dot product of final
    embeddings and average HR@k / NDCG@k."""
    if k <= 0:
        raise ConfigError(f"k must be positive, got {k}")
    tasks = build_tasks(store, split, protocol, num_negatives, seed)
    users_final = state.final_user.data
    items_final = state.final_item.data
    hits, gains = [], []
    per_user: dict[int, tuple[float, float]] = {}
    skipped = 0
    for task in tasks:
        if task.user >= users_final.shape[0]:
            skipped += 1
            continue
        scores = items_final[task.candidates] @ users_final[task.user]
        rank = rank_of_positive(scores, task.candidates)
        hit = 1.0 if rank <= k else 0.0
        gain = 1.0 / np.log2(rank + 1) if rank <= k else 0.0
        hits.append(hit)
        gains.append(gain)
        if keep_per_user:
            per_user[task.user] = (hit, gain)
    if not hits:
        raise ConfigError("no test users to evaluate")
    return MetricReport(
        hr=float(np.mean(hits)), ndcg=float(np.mean(gains)), k=k,
        protocol=protocol, num_evaluated=len(hits), num_skipped=skipped,
        per_user=per_user)
