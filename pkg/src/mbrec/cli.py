"""Command line interface.

Subcommands: prepare, train, evaluate, export-weights,
export-embeddings, gradcheck, synth-data. Exit codes: 0 success,
1 bad configuration, 2 data problem, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys


from dataclasses import fields

from . import synth
from .data import (filter_min_target, load_interactions, load_prepared,
                   save_prepared, split_leave_one_out)
from .encoder import export_embeddings
from .errors import ConfigError, DataError, NumericalError
from .eval import evaluate
from .trainer import ABLATIONS, TrainConfig, Trainer

log = logging.getLogger("mbrec")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; this project reserves 2 for data
    problems, so steer argument errors to the config exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _coerce_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


# fields whose command line spelling differs from the config key
_SPECIAL_FLAGS = {"ablation", "normalize_adjacency", "bpr_all_behaviors"}


def _add_config_flags(sp) -> None:
    """One flag per TrainConfig field (defaults come from the config
    file or the dataclass, so every flag defaults to "not given")."""
    choices = {"phi": ["cosine", "dot"], "eval_protocol": ["sampled", "full"]}
    for f in fields(TrainConfig):
        if f.name in _SPECIAL_FLAGS:
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.name == "inner_lr" or isinstance(f.default, float):
            sp.add_argument(flag, type=float, default=None, dest=f.name)
        elif isinstance(f.default, bool):
            sp.add_argument(flag, type=_coerce_value, default=None,
                            dest=f.name)
        elif isinstance(f.default, int):
            sp.add_argument(flag, type=int, default=None, dest=f.name)
        else:
            sp.add_argument(flag, type=str, default=None, dest=f.name,
                            choices=choices.get(f.name))
    sp.add_argument("--ablate", default=None, choices=list(ABLATIONS),
                    help="drop a component: clf, mcn, or mke")
    sp.add_argument("--raw-adjacency", action="store_true",
                    help="propagate over unnormalized interaction counts")
    sp.add_argument("--bpr-all-behaviors", action="store_true",
                    help="rank with positives from every behavior, not "
                         "just the target")


def _build_config(args) -> TrainConfig:
    d: dict = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            d.update(json.load(fh))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        d[key.strip()] = _coerce_value(value.strip())
    for f in fields(TrainConfig):
        if f.name in _SPECIAL_FLAGS:
            continue
        v = getattr(args, f.name, None)
        if v is not None:
            d[f.name] = v
    if getattr(args, "ablate", None) is not None:
        d["ablation"] = args.ablate
    if getattr(args, "raw_adjacency", False):
        d["normalize_adjacency"] = False
    if getattr(args, "bpr_all_behaviors", False):
        d["bpr_all_behaviors"] = True
    return TrainConfig.from_dict(d)


def cmd_prepare(args) -> int:
    behaviors = args.behaviors.split(",") if args.behaviors else None
    store = load_interactions(args.input, fmt=args.format,
                              behaviors=behaviors, target=args.target)
    if args.min_target > 1:
        store = filter_min_target(store, args.min_target)
    split = split_leave_one_out(store, meta_fraction=args.meta_fraction,
                                seed=args.seed,
                                drop_test_aux=args.drop_test_aux)
    manifest = save_prepared(args.out, store, split, seed=args.seed,
                             extra_manifest={"drop_test_aux":
                                             bool(args.drop_test_aux)})
    print(json.dumps(manifest, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    cfg = _build_config(args)
    store, split = load_prepared(args.data)
    trainer = Trainer(store, split, cfg, out_dir=args.out)
    trainer.fit(quiet=args.quiet)
    state = trainer.embedding_state()
    report = evaluate(state, store, split, k=cfg.eval_k,
                      protocol=cfg.eval_protocol,
                      num_negatives=cfg.eval_negatives, seed=cfg.seed)
    print(report.line())
    return 0


def cmd_evaluate(args) -> int:
    store, split = load_prepared(args.data)
    trainer = Trainer.from_checkpoint(args.checkpoint, store, split)
    state = trainer.embedding_state()
    report = evaluate(state, store, split, k=args.k, protocol=args.protocol,
                      num_negatives=args.negatives, seed=args.seed)
    print(report.line())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"hr": report.hr, "ndcg": report.ndcg, "k": report.k,
                       "protocol": report.protocol,
                       "num_evaluated": report.num_evaluated}, fh, indent=2)
            fh.write("\n")
    return 0


def cmd_export_weights(args) -> int:
    store, split = load_prepared(args.data)
    trainer = Trainer.from_checkpoint(args.checkpoint, store, split)
    trainer.export_pair_weights(args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_export_embeddings(args) -> int:
    store, split = load_prepared(args.data)
    trainer = Trainer.from_checkpoint(args.checkpoint, store, split)
    export_embeddings(trainer.embedding_state(), args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .autodiff import standard_battery
    try:
        results = standard_battery(seed=args.seed, tol=args.tol)
    except AssertionError as exc:
        print(f"FAIL: {exc}")
        return 3
    worst = 0.0
    for name, err in results:
        print(f"{name:30s} rel_err={err:.3e}")
        worst = max(worst, err)
    print(f"worst relative error: {worst:.3e} (tolerance {args.tol})")
    return 0


def cmd_synth_data(args) -> int:
    result = synth.generate(num_users=args.users, num_items=args.items,
                            total=args.total, noisy_frac=args.noisy_frac,
                            clusters=args.clusters, seed=args.seed,
                            noise_mode=args.noise_mode)
    synth.write_tsv(result, args.out, noisy_path=args.noisy_out)
    print(json.dumps({
        "out": args.out, "users": args.users, "items": args.items,
        "interactions": int(len(result.rows)),
        "noisy_users": int(len(result.noisy_users)),
        "behaviors": list(result.behaviors), "target": result.target,
    }, sort_keys=True))
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="mbrec",
                description="multi-behavior recommender training toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", help="index a raw log and write splits")
    sp.add_argument("--input", required=True)
    sp.add_argument("--format", default="triple-tsv",
                    choices=["triple-tsv", "per-behavior-files"])
    sp.add_argument("--out", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--behaviors", default=None,
                    help="comma-separated behavior order")
    sp.add_argument("--meta-fraction", type=float, default=0.1)
    sp.add_argument("--min-target", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--drop-test-aux", action="store_true",
                    help="also remove auxiliary records of held-out pairs")
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", help="train on a prepared dataset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", default=None, help="JSON config file")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override one config key")
    _add_config_flags(sp)
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="rank held-out items")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--k", type=int, default=10)
    sp.add_argument("--protocol", default="sampled",
                    choices=["sampled", "full"])
    sp.add_argument("--negatives", type=int, default=99)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None, help="also write metrics JSON here")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("export-weights",
                        help="per-user behavior-pair loss weights to CSV")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export_weights)

    sp = sub.add_parser("export-embeddings",
                        help="final user/item embeddings to CSV")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export_embeddings)

    sp = sub.add_parser("gradcheck",
                        help="finite-difference check of every primitive")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("synth-data", help="generate a synthetic log")
    sp.add_argument("--out", required=True)
    sp.add_argument("--users", type=int, default=2174)
    sp.add_argument("--items", type=int, default=30113)
    sp.add_argument("--total", type=int, default=97381)
    sp.add_argument("--noisy-frac", type=float, default=0.35)
    sp.add_argument("--noise-mode", default="browse",
                    choices=["browse", "shifted"],
                    help="noisy views: uniform browsing or a coherent "
                         "wrong-cluster shift")
    sp.add_argument("--clusters", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--noisy-out", default=None,
                    help="write ground-truth noisy user ids here")
    sp.set_defaults(func=cmd_synth_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
