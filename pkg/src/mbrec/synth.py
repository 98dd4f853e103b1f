"""Synthetic multi-behavior interaction generator.

Users and items live in latent clusters with a within-cluster
popularity skew. Purchases (and carts) always follow the user's
cluster preference; a configurable fraction of "noisy" users browse
uniformly at random, so their view history carries no signal about
what they buy. That split is the ground truth for checking that
learned per-user loss weights favor consistent histories.

The generator is exact: it emits precisely ``total`` deduplicated
(user, item, behavior) triples and every item appears at least once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

BEHAVIORS = ("view", "cart", "buy")
TARGET = "buy"
_VIEW, _CART, _BUY = 0, 1, 2


@dataclass
class SynthResult:
    rows: np.ndarray
    timestamps: np.ndarray
    noisy_users: np.ndarray
    behaviors: tuple[str, ...] = BEHAVIORS
    target: str = TARGET


def generate(num_users: int = 2174, num_items: int = 30113,
             total: int = 97381, noisy_frac: float = 0.35,
             clusters: int = 16, seed: int = 0,
             noise_mode: str = "browse") -> SynthResult:
    if num_users < clusters or num_items < clusters:
        raise ConfigError("need at least one user and item per cluster")
    if not (0.0 <= noisy_frac <= 1.0):
        raise ConfigError(f"noisy_frac must be in [0, 1], got {noisy_frac}")
    if noise_mode not in ("browse", "shifted"):
        raise ConfigError(f"noise_mode must be 'browse' or 'shifted', "
                          f"got {noise_mode!r}")
    rng = np.random.default_rng(seed)

    item_cluster = rng.integers(0, clusters, size=num_items)
    # guarantee no empty cluster
    item_cluster[:clusters] = np.arange(clusters)
    user_cluster = rng.integers(0, clusters, size=num_users)
    user_cluster2 = rng.integers(0, clusters, size=num_users)
    noisy = rng.random(num_users) < noisy_frac

    cluster_items = [np.flatnonzero(item_cluster == c) for c in range(clusters)]
    popularity = []
    for c in range(clusters):
        n = len(cluster_items[c])
        w = 1.0 / np.arange(1, n + 1) ** 0.9
        rng.shuffle(w)
        popularity.append(w / w.sum())

    seen: set[tuple[int, int, int]] = set()
    rows: list[tuple[int, int, int]] = []

    def add(u: int, i: int, k: int) -> bool:
        key = (u, i, k)
        if key in seen:
            return False
        seen.add(key)
        rows.append(key)
        return True

    def aligned_item(u: int) -> int:
        c = user_cluster[u] if rng.random() < 0.85 else user_cluster2[u]
        return int(rng.choice(cluster_items[c], p=popularity[c]))

    # "browse" noise is uniform over the catalog; "shifted" noise reads
    # coherently from the next cluster over, so a noisy history points
    # somewhere definite (and wrong) instead of nowhere
    def noisy_item(u: int) -> int:
        if noise_mode == "browse":
            return int(rng.integers(num_items))
        c = (user_cluster[u] + 1) % clusters
        return int(rng.choice(cluster_items[c], p=popularity[c]))

    def cart_item(u: int) -> int:
        if noisy[u] and noise_mode == "shifted":
            return noisy_item(u)
        return aligned_item(u)

    # purchases and carts follow preference for every user; purchases
    # are kept sparse relative to browsing, as in real transaction logs.
    # Under shifted noise the non-purchase carts of noisy users read
    # from the wrong cluster as well, so their auxiliary history is
    # coherently misleading rather than merely diffuse.
    for u in range(num_users):
        n_buy = 1 + rng.poisson(1.5)
        for _ in range(n_buy):
            i = aligned_item(u)
            add(u, i, _BUY)
            add(u, i, _VIEW)
            if rng.random() < 0.7:
                add(u, i, _CART)
        for _ in range(rng.poisson(2)):
            i = cart_item(u)
            if add(u, i, _CART):
                add(u, i, _VIEW)

    # coverage: every item is viewed by at least one same-cluster user
    viewed = np.zeros(num_items, dtype=bool)
    for u, i, k in rows:
        viewed[i] = True
    for c in range(clusters):
        users_c = np.flatnonzero(user_cluster == c)
        if len(users_c) == 0:
            users_c = np.arange(num_users)
        for i in cluster_items[c]:
            if not viewed[i]:
                for _ in range(20):
                    if add(int(rng.choice(users_c)), int(i), _VIEW):
                        break
                viewed[i] = True

    if len(rows) > total:
        raise DataError(
            f"total={total} too small for this shape; need at least {len(rows)}")

    # remaining budget goes to browsing, skewed by user activity
    budget = total - len(rows)
    act = rng.lognormal(0.0, 1.0, size=num_users)
    counts = rng.multinomial(budget, act / act.sum())
    for u in range(num_users):
        for _ in range(counts[u]):
            for _ in range(20):
                i = noisy_item(u) if noisy[u] else aligned_item(u)
                if add(u, i, _VIEW):
                    break

    # dedup collisions can leave a shortfall; pad with random views
    guard = 0
    while len(rows) < total:
        add(int(rng.integers(num_users)), int(rng.integers(num_items)), _VIEW)
        guard += 1
        if guard > 50 * total:
            raise DataError("could not reach the requested interaction count")

    arr = np.array(rows, dtype=np.int64)
    ts = rng.integers(0, 1 << 20, size=len(arr))
    return SynthResult(rows=arr, timestamps=ts,
                       noisy_users=np.flatnonzero(noisy))


def write_tsv(result: SynthResult, path: str,
              noisy_path: str | None = None) -> None:
    """Serialize as user<TAB>item<TAB>behavior<TAB>timestamp with string
    raw ids (exercising dense re-indexing on load)."""
    with open(path, "w", encoding="utf-8") as fh:
        for (u, i, k), t in zip(result.rows, result.timestamps):
            fh.write(f"u{u}\ti{i}\t{result.behaviors[k]}\t{t}\n")
    if noisy_path:
        with open(noisy_path, "w", encoding="utf-8") as fh:
            for u in result.noisy_users:
                fh.write(f"u{u}\n")
