"""End-to-end command line runs and the exit code contract."""

import json
import os

import numpy as np
import pytest

from mbrec.cli import main

RAW = "".join(
    f"u{u}\ti{i}\tview\t{10 * u + j}\n"
    for u in range(12) for j, i in enumerate(np.random.default_rng(0)
                                             .choice(15, 5, replace=False))
) + "".join(
    f"u{u}\ti{u % 15}\tbuy\t{100 + u}\n" for u in range(12)
) + "".join(
    f"u{u}\ti{(u + 3) % 15}\tbuy\t{50 + u}\n" for u in range(12)
)


@pytest.fixture
def prepared(tmp_path):
    raw = tmp_path / "raw.tsv"
    raw.write_text(RAW)
    data = str(tmp_path / "data")
    rc = main(["prepare", "--input", str(raw), "--out", data,
               "--target", "buy", "--meta-fraction", "0.2", "--seed", "1"])
    assert rc == 0
    return data


TRAIN_ARGS = ["--set", "dim=4", "--set", "layers=2", "--set", "epochs=2",
              "--set", "neg_users=6", "--set", "meta_batch=8",
              "--set", "train_batch=16", "--set", "eval_negatives=5",
              "--set", "lr_cycle=4", "--set", "base_lr=0.001",
              "--set", "max_lr=0.01"]


def test_prepare_prints_manifest(tmp_path, capsys):
    raw = tmp_path / "raw.tsv"
    raw.write_text(RAW)
    data = str(tmp_path / "data")
    rc = main(["prepare", "--input", str(raw), "--out", data,
               "--target", "buy", "--meta-fraction", "0.2", "--seed", "1"])
    assert rc == 0
    out = capsys.readouterr().out
    manifest = json.loads(out.strip().split("\n")[-1])
    assert manifest["target"] == "buy"
    assert manifest["counts"]["test"] == 12
    assert os.path.exists(os.path.join(data, "train.tsv"))
    assert os.path.exists(os.path.join(data, "manifest.json"))


def test_missing_input_is_exit_2(tmp_path):
    rc = main(["prepare", "--input", str(tmp_path / "nope.tsv"),
               "--out", str(tmp_path / "d"), "--target", "buy"])
    assert rc == 2


def test_unknown_target_is_exit_1(tmp_path):
    raw = tmp_path / "raw.tsv"
    raw.write_text(RAW)
    rc = main(["prepare", "--input", str(raw), "--out", str(tmp_path / "d"),
               "--target", "wish"])
    assert rc == 1


def test_bad_flags_are_exit_1(tmp_path, capsys):
    assert main(["prepare", "--input", "x"]) == 1  # missing required
    assert main(["no-such-command"]) == 1
    capsys.readouterr()


def test_train_evaluate_export_cycle(prepared, tmp_path, capsys):
    run = str(tmp_path / "run")
    rc = main(["train", "--data", prepared, "--out", run, "--quiet",
               "--seed", "3"] + TRAIN_ARGS)
    assert rc == 0
    out = capsys.readouterr().out
    assert "HR@10=" in out and "NDCG@10=" in out
    ckpt = os.path.join(run, "checkpoint.npz")
    assert os.path.exists(ckpt)
    assert os.path.exists(os.path.join(run, "metrics.jsonl"))

    metrics_json = str(tmp_path / "eval.json")
    rc = main(["evaluate", "--data", prepared, "--checkpoint", ckpt,
               "--negatives", "5", "--out", metrics_json])
    assert rc == 0
    report = json.load(open(metrics_json))
    assert set(report) == {"hr", "ndcg", "k", "protocol", "num_evaluated"}
    assert 0.0 <= report["hr"] <= 1.0

    weights_csv = str(tmp_path / "w.csv")
    rc = main(["export-weights", "--data", prepared, "--checkpoint", ckpt,
               "--out", weights_csv])
    assert rc == 0
    lines = open(weights_csv).read().strip().split("\n")
    assert lines[0] == "user,pair,weight"
    assert len(lines) == 1 + 12  # every user, one auxiliary pair

    emb_csv = str(tmp_path / "emb.csv")
    rc = main(["export-embeddings", "--data", prepared, "--checkpoint", ckpt,
               "--out", emb_csv])
    assert rc == 0
    header = open(emb_csv).readline().strip()
    assert header == "entity,index,d0,d1,d2,d3"


def test_unknown_config_key_is_exit_1(prepared, tmp_path, capsys):
    rc = main(["train", "--data", prepared, "--out", str(tmp_path / "r"),
               "--set", "lerning_rate=0.1"])
    assert rc == 1
    assert "configuration error" in capsys.readouterr().err


def test_config_file_plus_overrides(prepared, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dim": 4, "layers": 2, "epochs": 1,
                               "neg_users": 6, "meta_batch": 8,
                               "train_batch": 16, "eval_negatives": 5,
                               "lr_cycle": 4, "base_lr": 0.001,
                               "max_lr": 0.01, "ablation": "mcn"}))
    rc = main(["train", "--data", prepared, "--out", str(tmp_path / "r"),
               "--config", str(cfg), "--quiet", "--epochs", "1"])
    assert rc == 0
    capsys.readouterr()


def test_dedicated_flags_override_config_file(prepared, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dim": 4, "layers": 2, "epochs": 1,
                               "neg_users": 6, "meta_batch": 8,
                               "train_batch": 16, "eval_negatives": 5,
                               "lr_cycle": 4, "base_lr": 0.001,
                               "max_lr": 0.01, "gamma": 3.0}))
    run = str(tmp_path / "r")
    rc = main(["train", "--data", prepared, "--out", run, "--quiet",
               "--config", str(cfg), "--set", "dim=5",
               "--dim", "6", "--gamma", "7.5", "--ablate", "mcn",
               "--raw-adjacency", "--bpr-all-behaviors"])
    assert rc == 0
    capsys.readouterr()
    z = np.load(os.path.join(run, "checkpoint.npz"))
    saved = json.loads(str(z["config_json"]))
    assert saved["dim"] == 6          # flag beats --set beats file
    assert saved["gamma"] == 7.5
    assert saved["ablation"] == "mcn"
    assert saved["normalize_adjacency"] is False
    assert saved["bpr_all_behaviors"] is True


def test_bad_ablate_choice_is_exit_1(prepared, tmp_path, capsys):
    rc = main(["train", "--data", prepared, "--out", str(tmp_path / "r"),
               "--ablate", "everything"])
    assert rc == 1
    capsys.readouterr()


def test_prepare_drop_test_aux_manifest(tmp_path, capsys):
    raw = tmp_path / "raw.tsv"
    raw.write_text(RAW)
    data = str(tmp_path / "data")
    rc = main(["prepare", "--input", str(raw), "--out", data,
               "--target", "buy", "--drop-test-aux"])
    assert rc == 0
    capsys.readouterr()
    manifest = json.load(open(os.path.join(data, "manifest.json")))
    assert manifest["drop_test_aux"] is True


def test_missing_checkpoint_is_exit_2(prepared, tmp_path, capsys):
    rc = main(["evaluate", "--data", prepared,
               "--checkpoint", str(tmp_path / "none.npz")])
    assert rc == 2
    capsys.readouterr()


def test_gradcheck_exit_codes(capsys):
    assert main(["gradcheck", "--tol", "0"]) == 3  # impossible tolerance
    out = capsys.readouterr()
    assert "FAIL" in out.out


def test_synth_data_roundtrip(tmp_path, capsys):
    log_path = str(tmp_path / "synth.tsv")
    rc = main(["synth-data", "--out", log_path, "--users", "40",
               "--items", "60", "--total", "900", "--clusters", "4",
               "--seed", "2"])
    assert rc == 0
    info = json.loads(capsys.readouterr().out.strip().split("\n")[-1])
    assert info["interactions"] == 900
    rc = main(["prepare", "--input", log_path, "--out",
               str(tmp_path / "d"), "--target", "buy"])
    assert rc == 0
