"""Training: pairwise ranking loss, bilevel weight learning, optimizers.

Each iteration of the full model runs three phases on one tape:

1. Build the weighted objective (ranking + contrastive terms, each
   per-sample weighted by the meta network) and take one differentiable
   SGD lookahead step of the encoder parameters.
2. Score an unweighted ranking loss on held-out meta interactions
   through the lookahead parameters and step the meta network with the
   gradient that flows back through phase 1's update.
3. Re-weight the same per-sample losses with the updated meta network
   and step the real encoder parameters.

Single-level ablations collapse to one forward/backward with fixed
weights.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from .autodiff import Tape, Tensor, grad, ops, recording
from .contrastive import ContrastiveBatch, all_pairs_losses
from .data import InteractionStore, SplitAssignment, build_graph
from .encoder import EncoderParams, EmbeddingState, encode
from .errors import ConfigError, DataError, NumericalError
from .eval import MetricReport, evaluate
from .meta import (GateParams, MetaNetParams, encode_meta_knowledge, weight,
                   weighted_total)

log = logging.getLogger(__name__)

ABLATIONS = ("none", "clf", "mcn", "mke")


@dataclass
class TrainConfig:
    dim: int = 32
    layers: int = 3
    temperature: float = 0.1
    neg_users: int = 256
    phi: str = "cosine"
    reg_lambda: float = 1e-3
    cl_beta: float = 1.0
    gamma: float = 10.0
    meta_dropout: float = 0.2
    meta_slope: float = 0.25
    meta_batch: int = 512
    train_batch: int = 1024
    epochs: int = 200
    patience: int = 10
    seed: int = 0
    base_lr: float = 1e-4
    max_lr: float = 1e-3
    lr_cycle: int = 200
    inner_lr: float | None = None
    inner_clip: float = 10.0
    meta_lr: float | None = None
    weight_decay: float = 0.0
    normalize_adjacency: bool = True
    bpr_all_behaviors: bool = False
    ablation: str = "none"
    eval_k: int = 10
    eval_negatives: int = 99
    eval_protocol: str = "sampled"

    def __post_init__(self):
        pos_int = ["dim", "layers", "neg_users", "meta_batch", "train_batch",
                   "epochs", "patience", "lr_cycle", "eval_k", "eval_negatives"]
        for name in pos_int:
            v = getattr(self, name)
            if not isinstance(v, int) or v <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        pos_float = ["temperature", "base_lr", "max_lr"]
        for name in pos_float:
            v = getattr(self, name)
            if not (float(v) > 0):
                raise ConfigError(f"{name} must be positive, got {v!r}")
        for name in ["reg_lambda", "cl_beta", "gamma", "weight_decay",
                     "meta_slope"]:
            v = getattr(self, name)
            if not (float(v) >= 0):
                raise ConfigError(f"{name} must be non-negative, got {v!r}")
        if not (0.0 <= self.meta_dropout < 1.0):
            raise ConfigError(
                f"meta_dropout must be in [0, 1), got {self.meta_dropout!r}")
        if self.base_lr > self.max_lr:
            raise ConfigError(
                f"base_lr {self.base_lr} exceeds max_lr {self.max_lr}")
        if self.inner_lr is not None and not (float(self.inner_lr) > 0):
            raise ConfigError(f"inner_lr must be positive, got {self.inner_lr!r}")
        if not (float(self.inner_clip) > 0):
            raise ConfigError(
                f"inner_clip must be positive, got {self.inner_clip!r}")
        if self.meta_lr is not None and not (float(self.meta_lr) > 0):
            raise ConfigError(f"meta_lr must be positive, got {self.meta_lr!r}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(
                f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.phi not in ("cosine", "dot"):
            raise ConfigError(f"phi must be cosine or dot, got {self.phi!r}")
        if self.eval_protocol not in ("sampled", "full"):
            raise ConfigError(
                f"eval_protocol must be sampled or full, got {self.eval_protocol!r}")
        if self.meta_batch > self.train_batch:
            log.warning("meta_batch %d exceeds train_batch %d",
                        self.meta_batch, self.train_batch)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class CyclicLR:
    """Triangular schedule: linear base->max over half a cycle, back
    down over the other half, repeating."""

    def __init__(self, base_lr: float, max_lr: float, cycle: int):
        if cycle < 2:
            raise ConfigError(f"lr cycle must be at least 2 steps, got {cycle}")
        self.base_lr = base_lr
        self.max_lr = max_lr
        self.cycle = cycle

    def lr_at(self, step: int) -> float:
        half = self.cycle / 2.0
        pos = step % self.cycle
        frac = pos / half if pos <= half else (self.cycle - pos) / half
        return self.base_lr + (self.max_lr - self.base_lr) * frac


class AdamW:
    """Adam with decoupled weight decay. With zero gradients the update
    reduces to pure shrinkage p *= (1 - lr * weight_decay)."""

    def __init__(self, params: dict[str, Tensor], betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = dict(params)
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self, grads: dict[str, Tensor], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            g = g.data if isinstance(g, Tensor) else np.asarray(g)
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            new = p.data - lr * update
            if self.weight_decay:
                new = new - lr * self.weight_decay * p.data
            p.assign_(new)

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}:t": np.array(self.t)}
        for n in self.params:
            out[f"{prefix}:m:{n}"] = self.m[n]
            out[f"{prefix}:v:{n}"] = self.v[n]
        return out

    def load_state(self, prefix: str, arrays: dict) -> None:
        self.t = int(arrays[f"{prefix}:t"])
        for n in self.params:
            self.m[n] = np.array(arrays[f"{prefix}:m:{n}"])
            self.v[n] = np.array(arrays[f"{prefix}:v:{n}"])


# --- ranking loss -------------------------------------------------------

@dataclass
class BprSample:
    """A batch of (user, positive item, negative item) index triples."""

    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    def __len__(self):
        return len(self.users)


def positive_sets(triples: np.ndarray, behavior: int) -> dict[int, set[int]]:
    """Per-user item sets for one behavior (the no-false-negative oracle)."""
    rows = triples[triples[:, 2] == behavior]
    out: dict[int, set[int]] = {}
    for u, i, _ in rows:
        out.setdefault(int(u), set()).add(int(i))
    return out


def sample_bpr(rows: np.ndarray, pos_sets: dict[int, set[int]],
               num_items: int, rng: np.random.Generator) -> BprSample:
    """Attach one resampled negative to each (user, item) positive row,
    rejecting items the user already interacted with. Rows whose user
    has no legal negative at all are replaced by a fresh draw from the
    remaining rows (logged)."""
    users = rows[:, 0].copy()
    pos = rows[:, 1].copy()
    saturated = np.fromiter(
        (len(pos_sets.get(int(u), ())) >= num_items for u in users),
        dtype=bool, count=len(users))
    if saturated.any():
        legal = np.flatnonzero(~saturated)
        if len(legal) == 0:
            raise DataError("every user in the batch interacted with every "
                            "item; no negatives exist")
        log.warning("resampled %d positives whose users interacted with "
                    "every item", int(saturated.sum()))
        repl = rng.choice(legal, size=int(saturated.sum()), replace=True)
        users[saturated] = users[repl]
        pos[saturated] = pos[repl]
    neg = rng.integers(0, num_items, size=len(rows))
    empty: set[int] = set()
    for j in range(len(rows)):
        s = pos_sets.get(int(users[j]), empty)
        while int(neg[j]) in s:
            neg[j] = rng.integers(0, num_items)
    return BprSample(users=users, pos=pos, neg=neg)


def score(state: EmbeddingState, users: np.ndarray, items: np.ndarray) -> Tensor:
    """Preference score: dot product of final user and item embeddings."""
    u = ops.take_rows(state.final_user, users)
    i = ops.take_rows(state.final_item, items)
    return ops.sum_(ops.mul(u, i), axis=1)


def bpr_loss(samples: BprSample, state: EmbeddingState, reg_lambda: float = 0.0,
             params: list[Tensor] | None = None, per_sample: bool = False):
    """Pairwise ranking loss: softplus of the negated positive-negative
    margin, summed over the batch. With equal scores each sample
    contributes ln 2. ``reg_lambda`` adds lambda * sum of squared
    parameter entries (never part of the per-sample vector)."""
    margin = ops.sub(score(state, samples.users, samples.pos),
                     score(state, samples.users, samples.neg))
    per = ops.softplus(ops.neg(margin))
    total = ops.sum_(per)
    if reg_lambda and params:
        sq = None
        for p in params:
            s = ops.sum_(ops.mul(p, p))
            sq = s if sq is None else ops.add(sq, s)
        total = ops.add(total, ops.scalar_mul(sq, reg_lambda))
    if per_sample:
        return total, per
    return total


# --- trainer ------------------------------------------------------------

@dataclass
class _Stream:
    """One weighted loss component: its per-sample vector plus the
    embedding rows that describe each sample to the meta network."""

    key: str
    per_sample: Tensor
    own_rows: Tensor
    base_rows: Tensor
    scale: float


class Trainer:
    def __init__(self, store: InteractionStore, split: SplitAssignment,
                 cfg: TrainConfig, out_dir: str | None = None):
        self.store = store
        self.split = split
        self.cfg = cfg
        self.out_dir = out_dir
        self.rng = np.random.default_rng(cfg.seed)
        self.graph = build_graph(store, normalize=cfg.normalize_adjacency,
                                 triples=split.train_and_meta())
        self.enc = EncoderParams.init(store.num_users, store.num_items,
                                      cfg.dim, cfg.layers, self.rng)
        self.sched = CyclicLR(cfg.base_lr, cfg.max_lr, cfg.lr_cycle)
        self.opt_enc = AdamW(self.enc.named(), weight_decay=cfg.weight_decay)
        self.step = 0
        self.epoch = 0

        self.bilevel = cfg.ablation in ("none", "mke")
        tgt = store.target_index
        if cfg.ablation == "mke":
            keys = [f"pair{tgt}_{k}" for k in range(store.num_behaviors)
                    if k != tgt] + ["bpr"]
            self.meta = GateParams.init(keys)
        elif cfg.ablation == "none":
            self.meta = MetaNetParams.init(cfg.dim, cfg.gamma,
                                           cfg.meta_dropout, cfg.meta_slope)
        else:
            self.meta = None
        self.opt_meta = (AdamW(self.meta.named(),
                               weight_decay=cfg.weight_decay)
                         if self.meta is not None else None)

        self.pos_sets = {k: positive_sets(split.train_and_meta(), k)
                         for k in range(store.num_behaviors)}
        target_rows = split.train[split.train[:, 2] == tgt]
        self.train_rows = (split.train if cfg.bpr_all_behaviors
                           else target_rows)
        self.meta_rows = split.meta[split.meta[:, 2] == tgt]
        if len(target_rows) == 0:
            raise DataError("no target-behavior training interactions")
        if self.bilevel and len(self.meta_rows) == 0:
            raise ConfigError("bilevel training needs a non-empty meta split "
                              "(re-run prepare with meta_fraction > 0)")

        # validation positives: one meta-split target interaction per user
        val_test: dict[int, int] = {}
        for u, i, _ in self.meta_rows:
            val_test.setdefault(int(u), int(i))
        self.val_split = (SplitAssignment(
            test=val_test, meta=np.zeros((0, 3), dtype=np.int64),
            train=split.train_and_meta()) if val_test else None)

        self.history: list[dict] = []
        self._nan_epochs = 0

    # -- loss assembly --

    def _loss_streams(self, state: EmbeddingState, samples: BprSample,
                      cl_batch: ContrastiveBatch | None) -> list[_Stream]:
        streams = []
        _, per = bpr_loss(samples, state, per_sample=True)
        streams.append(_Stream(
            key="bpr", per_sample=per,
            own_rows=ops.take_rows(state.final_item, samples.pos),
            base_rows=ops.take_rows(state.final_user, samples.users),
            scale=1.0))
        if cl_batch is not None and self.cfg.ablation != "clf":
            for pl in all_pairs_losses(state, self.store.target_index, cl_batch):
                k, kp = pl.pair
                streams.append(_Stream(
                    key=f"pair{k}_{kp}", per_sample=pl.per_user,
                    own_rows=ops.take_rows(state.beh_final_user[kp],
                                           cl_batch.anchors),
                    base_rows=ops.take_rows(state.final_user, cl_batch.anchors),
                    scale=self.cfg.cl_beta))
        return streams

    def _stream_weights(self, st: _Stream, training: bool) -> Tensor | None:
        """Weight vector for a stream, or None for uniform weighting."""
        if self.cfg.ablation in ("mcn", "clf"):
            return None
        if self.cfg.ablation == "mke":
            return self.meta.weight(st.key, st.per_sample.shape[0])
        mk = encode_meta_knowledge(st.per_sample, st.own_rows, st.base_rows,
                                   self.cfg.gamma)
        return weight(self.meta, mk, self.rng, training=training)

    def _weighted(self, streams: list[_Stream], stats: dict,
                  training: bool = True) -> Tensor:
        total = None
        for st in streams:
            w = self._stream_weights(st, training)
            if w is None:
                part = ops.sum_(st.per_sample)
            else:
                part = weighted_total(w, st.per_sample)
                stats[f"omega_{st.key}"] = float(np.mean(w.data))
            part = ops.scalar_mul(part, st.scale)
            total = part if total is None else ops.add(total, part)
            loss_key = "l_bpr" if st.key == "bpr" else f"l_cl_{st.key}"
            stats[loss_key] = float(np.mean(st.per_sample.data))
        return total

    def _reg(self) -> Tensor:
        sq = None
        for p in self.enc.tensors():
            s = ops.sum_(ops.mul(p, p))
            sq = s if sq is None else ops.add(sq, s)
        return ops.scalar_mul(sq, self.cfg.reg_lambda)

    def _cl_batch(self, users: np.ndarray) -> ContrastiveBatch | None:
        if self.store.num_behaviors < 2 or self.cfg.ablation == "clf":
            return None
        anchors = np.unique(users)
        n_neg = min(self.cfg.neg_users, self.store.num_users)
        negs = self.rng.choice(self.store.num_users, size=n_neg, replace=False)
        return ContrastiveBatch(anchors=anchors, negatives=negs,
                                temperature=self.cfg.temperature,
                                phi=self.cfg.phi)

    def _sample_meta_batch(self) -> BprSample:
        n = len(self.meta_rows)
        take = min(self.cfg.meta_batch, n)
        idx = self.rng.choice(n, size=take, replace=False)
        return sample_bpr(self.meta_rows[idx],
                          self.pos_sets[self.store.target_index],
                          self.store.num_items, self.rng)

    def _sample_train(self, chunk: np.ndarray) -> BprSample:
        """Negatives are checked against the positives of each row's own
        behavior (only the target behavior appears unless the config
        asks for the ranking loss over every behavior)."""
        if not self.cfg.bpr_all_behaviors:
            return sample_bpr(chunk, self.pos_sets[self.store.target_index],
                              self.store.num_items, self.rng)
        parts = []
        for k in np.unique(chunk[:, 2]):
            rows = chunk[chunk[:, 2] == k]
            parts.append(sample_bpr(rows, self.pos_sets[int(k)],
                                    self.store.num_items, self.rng))
        return BprSample(users=np.concatenate([p.users for p in parts]),
                         pos=np.concatenate([p.pos for p in parts]),
                         neg=np.concatenate([p.neg for p in parts]))

    @staticmethod
    def _check_finite(value: float, what: str) -> None:
        if not math.isfinite(value):
            raise NumericalError(f"{what} is not finite ({value})")

    # -- iterations --

    def _iteration_bilevel(self, chunk: np.ndarray) -> dict:
        cfg = self.cfg
        lr = self.sched.lr_at(self.step)
        alpha = cfg.inner_lr if cfg.inner_lr is not None else lr
        stats: dict[str, float] = {}
        samples = self._sample_train(chunk)
        cl_batch = self._cl_batch(samples.users)
        meta_samples = self._sample_meta_batch()
        names = list(self.enc.named())
        tape = Tape()
        with recording(tape):
            state = encode(self.graph, self.enc, cfg.normalize_adjacency)
            streams = self._loss_streams(state, samples, cl_batch)
            reg = self._reg()
            l1 = ops.add(self._weighted(streams, {}, training=True), reg)
            self._check_finite(l1.item(), "phase-1 objective")

            # phase 1: differentiable lookahead step of the encoder.  The
            # step length is clipped by the global gradient norm (treated
            # as a constant, so the weight-net gradient keeps its shape);
            # shared propagation weights accumulate gradient over every
            # anchor and an unclipped step can blow the lookahead up.
            g = grad(l1, self.enc.tensors(), tape, create_graph=True)
            gnorm = math.sqrt(sum(float(np.sum(gi.data ** 2)) for gi in g))
            step = alpha * min(1.0, cfg.inner_clip / max(gnorm, 1e-12))
            look = {n: ops.sub(p, ops.scalar_mul(gi, step))
                    for n, p, gi in zip(names, self.enc.tensors(), g)}
            look_state = encode(self.graph, self.enc.replace(look),
                                cfg.normalize_adjacency)

            # phase 2: meta gradient through the lookahead
            meta_obj = bpr_loss(meta_samples, look_state)
            self._check_finite(meta_obj.item(), "meta objective")
            meta_names = list(self.meta.named())
            mg = grad(meta_obj, self.meta.tensors(), tape)
            self.opt_meta.step(dict(zip(meta_names, mg)),
                               cfg.meta_lr if cfg.meta_lr is not None else lr)

            # phase 3: re-weight the same losses with the updated meta
            # network and step the real encoder parameters
            l3 = ops.add(self._weighted(streams, stats, training=True), reg)
            self._check_finite(l3.item(), "phase-3 objective")
            g3 = grad(l3, self.enc.tensors(), tape)
        for t in g3:
            if not np.all(np.isfinite(t.data)):
                raise NumericalError("non-finite encoder gradient")
        self.opt_enc.step(dict(zip(names, g3)), lr)
        self.step += 1
        stats["loss"] = l3.item()
        stats["meta_bpr"] = meta_obj.item() / max(len(meta_samples), 1)
        stats["inner_gnorm"] = gnorm
        stats["lr"] = lr
        return stats

    def _iteration_single(self, chunk: np.ndarray) -> dict:
        cfg = self.cfg
        lr = self.sched.lr_at(self.step)
        stats: dict[str, float] = {}
        samples = self._sample_train(chunk)
        cl_batch = self._cl_batch(samples.users)
        names = list(self.enc.named())
        tape = Tape()
        with recording(tape):
            state = encode(self.graph, self.enc, cfg.normalize_adjacency)
            streams = self._loss_streams(state, samples, cl_batch)
            loss = ops.add(self._weighted(streams, stats, training=True),
                           self._reg())
            self._check_finite(loss.item(), "objective")
            g = grad(loss, self.enc.tensors(), tape)
        for t in g:
            if not np.all(np.isfinite(t.data)):
                raise NumericalError("non-finite encoder gradient")
        self.opt_enc.step(dict(zip(names, g)), lr)
        self.step += 1
        stats["loss"] = loss.item()
        stats["lr"] = lr
        return stats

    # -- epoch / fit --

    def train_epoch(self) -> dict:
        rows = self.train_rows
        perm = self.rng.permutation(len(rows))
        bsz = self.cfg.train_batch
        n_batches = math.ceil(len(rows) / bsz)
        agg: dict[str, list[float]] = {}
        diverged = False
        for b in range(n_batches):
            chunk = rows[perm[b * bsz:(b + 1) * bsz]]
            if len(chunk) == 0:
                continue
            try:
                stats = (self._iteration_bilevel(chunk) if self.bilevel
                         else self._iteration_single(chunk))
            except NumericalError as exc:
                log.warning("epoch %d aborted at batch %d: %s",
                            self.epoch, b, exc)
                diverged = True
                break
            for k, v in stats.items():
                agg.setdefault(k, []).append(v)
        out = {k: float(np.mean(v)) for k, v in agg.items()}
        out["diverged"] = 1 if diverged else 0
        out["batches"] = len(agg.get("loss", []))
        self._nan_epochs = self._nan_epochs + 1 if diverged else 0
        if diverged and not agg:
            raise NumericalError("every batch of the epoch diverged")
        if self._nan_epochs >= 3:
            raise NumericalError("three consecutive epochs diverged")
        return out

    def validate(self) -> MetricReport | None:
        if self.val_split is None:
            return None
        state = encode(self.graph, self.enc, self.cfg.normalize_adjacency)
        return evaluate(state, self.store, self.val_split, k=self.cfg.eval_k,
                        protocol="sampled",
                        num_negatives=self.cfg.eval_negatives,
                        seed=self.cfg.seed)

    def fit(self, log_path: str | None = None,
            checkpoint_path: str | None = None,
            quiet: bool = False) -> list[dict]:
        if self.out_dir:
            os.makedirs(self.out_dir, exist_ok=True)
            log_path = log_path or os.path.join(self.out_dir, "metrics.jsonl")
            checkpoint_path = checkpoint_path or os.path.join(
                self.out_dir, "checkpoint.npz")
        best_hr = -1.0
        best_epoch = -1
        strikes = 0
        for _ in range(self.cfg.epochs):
            t0 = time.time()
            stats = self.train_epoch()
            val = self.validate()
            entry = {"epoch": self.epoch}
            entry.update(stats)
            if val is not None:
                entry["hr10"] = val.hr
                entry["ndcg10"] = val.ndcg
            self.history.append(entry)
            if log_path:
                with open(log_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, sort_keys=True) + "\n")
            if not quiet:
                took = time.time() - t0
                msg = " ".join(f"{k}={v:.4f}" for k, v in sorted(entry.items())
                               if isinstance(v, float))
                log.info("epoch %d (%.1fs): %s", self.epoch, took, msg)
            improved = val is not None and val.hr > best_hr
            if improved:
                best_hr = val.hr
                best_epoch = self.epoch
                strikes = 0
                if checkpoint_path:
                    self.save_checkpoint(checkpoint_path)
            else:
                strikes += 1
            self.epoch += 1
            if val is not None and strikes > self.cfg.patience:
                log.info("early stop at epoch %d (best val HR %.4f at %d)",
                         self.epoch - 1, best_hr, best_epoch)
                break
        if checkpoint_path and best_epoch >= 0:
            self.restore_checkpoint(checkpoint_path)
        elif checkpoint_path:
            self.save_checkpoint(checkpoint_path)
        return self.history

    # -- persistence --

    def save_checkpoint(self, path: str) -> None:
        arrays: dict[str, np.ndarray] = {
            "config_json": np.array(json.dumps(self.cfg.to_dict(),
                                               sort_keys=True)),
            "epoch": np.array(self.epoch),
            "sched_step": np.array(self.step),
            "num_users": np.array(self.store.num_users),
            "num_items": np.array(self.store.num_items),
        }
        for n, p in self.enc.named().items():
            arrays[f"enc:{n}"] = p.data
        arrays.update(self.opt_enc.state_arrays("opt_enc"))
        if self.meta is not None:
            for n, p in self.meta.named().items():
                arrays[f"meta:{n}"] = p.data
            arrays.update(self.opt_meta.state_arrays("opt_meta"))
        np.savez_compressed(path, **arrays)

    def restore_checkpoint(self, path: str) -> None:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
        if (int(arrays["num_users"]) != self.store.num_users
                or int(arrays["num_items"]) != self.store.num_items):
            raise DataError("checkpoint shape does not match the dataset")
        for n, p in self.enc.named().items():
            p.assign_(arrays[f"enc:{n}"])
        self.opt_enc.load_state("opt_enc", arrays)
        if self.meta is not None:
            for n, p in self.meta.named().items():
                p.assign_(arrays[f"meta:{n}"])
            self.opt_meta.load_state("opt_meta", arrays)
        self.step = int(arrays["sched_step"])
        self.epoch = int(arrays["epoch"])

    @classmethod
    def from_checkpoint(cls, path: str, store: InteractionStore,
                        split: SplitAssignment,
                        out_dir: str | None = None) -> "Trainer":
        with np.load(path, allow_pickle=False) as z:
            cfg = TrainConfig.from_dict(json.loads(str(z["config_json"])))
        tr = cls(store, split, cfg, out_dir=out_dir)
        tr.restore_checkpoint(path)
        return tr

    # -- exports --

    def export_pair_weights(self, path: str, chunk_size: int = 1024) -> None:
        """Per-user contrastive loss and learned weight for every
        behavior pair, in eval mode (no dropout), to CSV."""
        if self.cfg.ablation in ("mcn", "clf"):
            raise ConfigError(
                f"ablation {self.cfg.ablation!r} learns no pair weights")
        state = encode(self.graph, self.enc, self.cfg.normalize_adjacency)
        tgt = self.store.target_index
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("user,pair,weight\n")
            users = np.arange(self.store.num_users)
            for c0 in range(0, len(users), chunk_size):
                anchors = users[c0:c0 + chunk_size]
                rng = np.random.default_rng([self.cfg.seed, c0])
                n_neg = min(self.cfg.neg_users, self.store.num_users)
                negs = rng.choice(self.store.num_users, size=n_neg,
                                  replace=False)
                batch = ContrastiveBatch(anchors=anchors, negatives=negs,
                                         temperature=self.cfg.temperature,
                                         phi=self.cfg.phi)
                for pl in all_pairs_losses(state, tgt, batch):
                    k, kp = pl.pair
                    key = f"pair{k}_{kp}"
                    if self.cfg.ablation == "mke":
                        w = self.meta.weight(key, len(anchors))
                    else:
                        mk = encode_meta_knowledge(
                            pl.per_user,
                            ops.take_rows(state.beh_final_user[kp], anchors),
                            ops.take_rows(state.final_user, anchors),
                            self.cfg.gamma)
                        w = weight(self.meta, mk, training=False)
                    name = (f"{self.store.behavior_names[kp]}-"
                            f"{self.store.behavior_names[k]}")
                    for j, u in enumerate(anchors):
                        fh.write(f"{u},{name},{float(w.data[j])!r}\n")

    def embedding_state(self) -> EmbeddingState:
        return encode(self.graph, self.enc, self.cfg.normalize_adjacency)
