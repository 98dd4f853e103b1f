"""Interaction log ingestion, multi-behavior graph construction, and
leave-one-out splitting.

Canonical input is a TSV `user<TAB>item<TAB>behavior[<TAB>timestamp]`,
one interaction per line; a directory with one `<behavior>.tsv` edge
list per behavior is also accepted. Raw ids are re-indexed densely in
order of first appearance.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import SparseMatrix
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


@dataclass
class InteractionStore:
    """All (user, item, behavior) triples with dense indices.

    ``triples`` is an (n, 3) int array of [user, item, behavior] rows;
    ``order`` preserves file position (ties in the leave-one-out split
    fall back to it); ``timestamps`` is optional.
    """

    num_users: int
    num_items: int
    triples: np.ndarray
    behavior_names: list[str]
    target_index: int
    user_ids: list[str] = field(default_factory=list)
    item_ids: list[str] = field(default_factory=list)
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        self.triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        if len(self.triples) == 0:
            raise DataError("no interactions")
        k = len(self.behavior_names)
        if not (0 <= self.target_index < k):
            raise ConfigError(f"target index {self.target_index} outside [0, {k})")
        u, i, b = self.triples[:, 0], self.triples[:, 1], self.triples[:, 2]
        if u.min() < 0 or u.max() >= self.num_users:
            raise DataError("user index out of range")
        if i.min() < 0 or i.max() >= self.num_items:
            raise DataError("item index out of range")
        if b.min() < 0 or b.max() >= k:
            raise DataError("behavior index out of range")

    @property
    def num_behaviors(self) -> int:
        return len(self.behavior_names)

    @property
    def target_name(self) -> str:
        return self.behavior_names[self.target_index]

    def behavior_triples(self, k: int) -> np.ndarray:
        return self.triples[self.triples[:, 2] == k]


@dataclass
class BehaviorGraph:
    """Per-behavior bipartite adjacency over users and items.

    ``user_item[k]`` is binary; the normalized variant carries
    1/sqrt(deg_u * deg_i) weights and keeps zero-degree rows all-zero.
    """

    num_users: int
    num_items: int
    user_item: list[SparseMatrix]
    norm_user_item: list[SparseMatrix] | None = None

    @property
    def num_behaviors(self) -> int:
        return len(self.user_item)

    def matrices(self, k: int, normalized: bool) -> tuple[SparseMatrix, SparseMatrix]:
        """(user->item, item->user) adjacency for behavior k."""
        mats = self.norm_user_item if normalized else self.user_item
        if normalized and mats is None:
            raise ConfigError("graph was built without normalized adjacency")
        return mats[k], mats[k].T


@dataclass
class SplitAssignment:
    """Leave-one-out split: one held-out target item per user, a meta
    subset of the remaining triples, and the training remainder."""

    test: dict[int, int]
    meta: np.ndarray
    train: np.ndarray

    def __post_init__(self):
        self.meta = np.asarray(self.meta, dtype=np.int64).reshape(-1, 3)
        self.train = np.asarray(self.train, dtype=np.int64).reshape(-1, 3)

    def train_and_meta(self) -> np.ndarray:
        if len(self.meta) == 0:
            return self.train
        return np.concatenate([self.train, self.meta], axis=0)


# --- loading -----------------------------------------------------------

def _parse_triple_tsv(path: str) -> tuple[list[tuple[str, str, str]], list[int | None]]:
    rows, stamps = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 3:
                raise DataError(f"{path}:{ln}: expected user<TAB>item<TAB>behavior")
            rows.append((parts[0], parts[1], parts[2]))
            stamps.append(int(parts[3]) if len(parts) > 3 and parts[3] else None)
    return rows, stamps


def _parse_behavior_dir(path: str, behaviors: list[str] | None
                        ) -> tuple[list[tuple[str, str, str]], list[int | None]]:
    files = sorted(f for f in os.listdir(path) if f.endswith(".tsv"))
    if not files:
        raise DataError(f"no .tsv behavior files in {path}")
    names = [os.path.splitext(f)[0] for f in files]
    if behaviors is not None:
        missing = set(behaviors) - set(names)
        if missing:
            raise DataError(f"behavior files missing for: {sorted(missing)}")
        order = behaviors
    else:
        order = names
    rows, stamps = [], []
    for name in order:
        with open(os.path.join(path, name + ".tsv"), "r", encoding="utf-8") as fh:
            for ln, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) < 2:
                    raise DataError(f"{name}.tsv:{ln}: expected user<TAB>item")
                rows.append((parts[0], parts[1], name))
                stamps.append(int(parts[2]) if len(parts) > 2 and parts[2] else None)
    return rows, stamps


def load_interactions(path: str, fmt: str = "triple-tsv", *,
                      behaviors: list[str] | None = None,
                      target: str | None = None) -> InteractionStore:
    """Load an interaction log and densely re-index users/items.

    ``behaviors`` fixes the behavior order (labels outside it are a hard
    error); when omitted, labels are taken in order of first appearance.
    ``target`` names the behavior being predicted.
    """
    if fmt == "triple-tsv":
        rows, stamps = _parse_triple_tsv(path)
    elif fmt == "per-behavior-files":
        rows, stamps = _parse_behavior_dir(path, behaviors)
    else:
        raise ConfigError(f"unknown format {fmt!r}")
    if not rows:
        raise DataError("no interactions")

    if behaviors is None:
        behaviors = []
        for _, _, b in rows:
            if b not in behaviors:
                behaviors.append(b)
    beh_index = {b: k for k, b in enumerate(behaviors)}

    if target is None:
        raise ConfigError("target behavior must be specified")
    if target not in beh_index:
        raise ConfigError(f"target {target!r} not among behaviors {behaviors}")

    users: dict[str, int] = {}
    items: dict[str, int] = {}
    seen: set[tuple[int, int, int]] = set()
    triples, kept_stamps = [], []
    dupes = 0
    for (u_raw, i_raw, b_raw), ts in zip(rows, stamps):
        k = beh_index.get(b_raw)
        if k is None:
            raise DataError(f"unknown behavior label {b_raw!r}")
        u = users.setdefault(u_raw, len(users))
        i = items.setdefault(i_raw, len(items))
        key = (u, i, k)
        if key in seen:
            dupes += 1
            continue
        seen.add(key)
        triples.append(key)
        kept_stamps.append(ts)
    if dupes:
        log.info("deduplicated %d repeated (user, item, behavior) triples", dupes)

    ts_arr = None
    if any(t is not None for t in kept_stamps):
        ts_arr = np.array([t if t is not None else -1 for t in kept_stamps],
                          dtype=np.int64)

    return InteractionStore(
        num_users=len(users), num_items=len(items),
        triples=np.array(triples, dtype=np.int64),
        behavior_names=list(behaviors), target_index=beh_index[target],
        user_ids=list(users), item_ids=list(items), timestamps=ts_arr)


def filter_min_target(store: InteractionStore, min_count: int) -> InteractionStore:
    """Keep users with at least ``min_count`` target-behavior interactions,
    then re-index densely. Items losing all interactions are dropped."""
    if min_count <= 1:
        return store
    tgt = store.triples[:, 2] == store.target_index
    counts = np.bincount(store.triples[tgt, 0], minlength=store.num_users)
    keep_users = counts >= min_count
    mask = keep_users[store.triples[:, 0]]
    kept = store.triples[mask]
    if len(kept) == 0:
        raise DataError(f"no users with >= {min_count} target interactions")
    dropped = int((~keep_users).sum())
    if dropped:
        log.info("min-target filter dropped %d users", dropped)

    u_old = np.unique(kept[:, 0])
    i_old = np.unique(kept[:, 1])
    u_map = {int(o): n for n, o in enumerate(u_old)}
    i_map = {int(o): n for n, o in enumerate(i_old)}
    remapped = kept.copy()
    remapped[:, 0] = [u_map[int(u)] for u in kept[:, 0]]
    remapped[:, 1] = [i_map[int(i)] for i in kept[:, 1]]
    ts = store.timestamps[mask] if store.timestamps is not None else None
    return InteractionStore(
        num_users=len(u_old), num_items=len(i_old), triples=remapped,
        behavior_names=store.behavior_names, target_index=store.target_index,
        user_ids=[store.user_ids[int(o)] for o in u_old] if store.user_ids else [],
        item_ids=[store.item_ids[int(o)] for o in i_old] if store.item_ids else [],
        timestamps=ts)


# --- graph -------------------------------------------------------------

def build_graph(store: InteractionStore, normalize: bool = True,
                triples: np.ndarray | None = None) -> BehaviorGraph:
    """Build per-behavior binary adjacency (and, optionally, the
    symmetric degree-normalized variant) from ``triples`` (defaults to
    the whole store; the trainer passes train + meta only)."""
    import scipy.sparse as sp

    if triples is None:
        triples = store.triples
    mats, norm_mats = [], []
    for k in range(store.num_behaviors):
        rows = triples[triples[:, 2] == k]
        a = sp.csr_matrix(
            (np.ones(len(rows)), (rows[:, 0], rows[:, 1])),
            shape=(store.num_users, store.num_items))
        a.data[:] = 1.0  # duplicates, if any, stay binary
        mats.append(SparseMatrix(a))
        if normalize:
            du = np.asarray(a.sum(axis=1)).ravel()
            di = np.asarray(a.sum(axis=0)).ravel()
            with np.errstate(divide="ignore"):
                su = np.where(du > 0, 1.0 / np.sqrt(du), 0.0)
                si = np.where(di > 0, 1.0 / np.sqrt(di), 0.0)
            n = sp.diags(su) @ a @ sp.diags(si)
            norm_mats.append(SparseMatrix(n.tocsr()))
    return BehaviorGraph(num_users=store.num_users, num_items=store.num_items,
                         user_item=mats,
                         norm_user_item=norm_mats if normalize else None)


# --- splitting ---------------------------------------------------------

def split_leave_one_out(store: InteractionStore, meta_fraction: float = 0.1,
                        seed: int = 0,
                        drop_test_aux: bool = False) -> SplitAssignment:
    """Hold out each user's last target-behavior interaction for test,
    then carve a seeded random ``meta_fraction`` of the remaining
    triples into the meta set.

    "Last" means greatest timestamp when timestamps exist (file order
    breaks ties), else last in file order.

    Auxiliary-behavior records of a held-out (user, item) pair stay in
    the training pool by default; ``drop_test_aux=True`` removes them
    as well, so the model never sees the test pair under any behavior.
    """
    if not (0.0 <= meta_fraction < 0.5):
        raise ConfigError(f"meta_fraction must be in [0, 0.5), got {meta_fraction}")

    n = len(store.triples)
    order = np.arange(n)
    if store.timestamps is not None:
        rank = np.lexsort((order, store.timestamps))
        pos = np.empty(n, dtype=np.int64)
        pos[rank] = np.arange(n)
    else:
        pos = order

    is_target = store.triples[:, 2] == store.target_index
    test: dict[int, int] = {}
    test_rows = np.full(n, False)
    best_pos: dict[int, int] = {}
    best_row: dict[int, int] = {}
    for row in np.flatnonzero(is_target):
        u = int(store.triples[row, 0])
        if u not in best_pos or pos[row] > best_pos[u]:
            best_pos[u] = int(pos[row])
            best_row[u] = int(row)
    single = 0
    target_counts = np.bincount(store.triples[is_target, 0],
                                minlength=store.num_users)
    for u, row in best_row.items():
        test[u] = int(store.triples[row, 1])
        test_rows[row] = True
        if target_counts[u] == 1:
            single += 1
    if single:
        log.info("%d users have a single target interaction; they contribute "
                 "no target-behavior training signal", single)

    if drop_test_aux and test:
        held_items = np.full(store.num_users, -1, dtype=np.int64)
        for u, it in test.items():
            held_items[u] = it
        aux_of_test = held_items[store.triples[:, 0]] == store.triples[:, 1]
        dropped = int(np.count_nonzero(aux_of_test & ~test_rows))
        if dropped:
            log.info("dropped %d auxiliary records of held-out pairs", dropped)
        test_rows |= aux_of_test

    remaining = np.flatnonzero(~test_rows)
    rng = np.random.default_rng(seed)
    n_meta = int(np.floor(meta_fraction * len(remaining)))
    meta_rows = rng.choice(remaining, size=n_meta, replace=False) if n_meta else \
        np.array([], dtype=np.int64)
    meta_mask = np.full(n, False)
    meta_mask[meta_rows] = True
    train_rows = remaining[~meta_mask[remaining]]

    return SplitAssignment(test=test,
                           meta=store.triples[np.sort(meta_rows)],
                           train=store.triples[np.sort(train_rows)])


# --- prepared-directory round trip --------------------------------------

def save_prepared(out_dir: str, store: InteractionStore,
                  split: SplitAssignment, seed: int,
                  extra_manifest: dict | None = None) -> dict:
    """Write train/meta/test TSVs plus a JSON manifest; returns the manifest."""
    os.makedirs(out_dir, exist_ok=True)

    def dump(name: str, arr: np.ndarray) -> None:
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
            for u, i, k in arr:
                fh.write(f"{u}\t{i}\t{k}\n")

    dump("train.tsv", split.train)
    dump("meta.tsv", split.meta)
    with open(os.path.join(out_dir, "test.tsv"), "w", encoding="utf-8") as fh:
        for u in sorted(split.test):
            fh.write(f"{u}\t{split.test[u]}\n")
    if store.user_ids and store.item_ids:
        with open(os.path.join(out_dir, "ids.tsv"), "w", encoding="utf-8") as fh:
            for idx, raw in enumerate(store.user_ids):
                fh.write(f"user\t{idx}\t{raw}\n")
            for idx, raw in enumerate(store.item_ids):
                fh.write(f"item\t{idx}\t{raw}\n")

    manifest = {
        "num_users": store.num_users,
        "num_items": store.num_items,
        "behaviors": store.behavior_names,
        "target": store.target_name,
        "seed": seed,
        "counts": {
            "train": int(len(split.train)),
            "meta": int(len(split.meta)),
            "test": int(len(split.test)),
        },
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_prepared(data_dir: str) -> tuple[InteractionStore, SplitAssignment]:
    """Reload a prepared directory into a store + split."""
    mpath = os.path.join(data_dir, "manifest.json")
    if not os.path.exists(mpath):
        raise DataError(f"not a prepared dataset dir (no manifest.json): {data_dir}")
    with open(mpath, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)

    def read(name: str, cols: int) -> np.ndarray:
        path = os.path.join(data_dir, name)
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append([int(x) for x in line.split("\t")])
        return np.array(rows, dtype=np.int64).reshape(-1, cols)

    train = read("train.tsv", 3)
    meta = read("meta.tsv", 3)
    test_arr = read("test.tsv", 2)
    test = {int(u): int(i) for u, i in test_arr}
    target_idx = manifest["behaviors"].index(manifest["target"])
    test_triples = np.array(
        [[u, i, target_idx] for u, i in sorted(test.items())],
        dtype=np.int64).reshape(-1, 3)
    all_triples = np.concatenate([train, meta, test_triples], axis=0)
    store = InteractionStore(
        num_users=manifest["num_users"], num_items=manifest["num_items"],
        triples=all_triples, behavior_names=list(manifest["behaviors"]),
        target_index=target_idx)
    return store, SplitAssignment(test=test, meta=meta, train=train)
