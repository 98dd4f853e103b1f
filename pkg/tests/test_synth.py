"""Synthetic interaction log generator."""

import numpy as np
import pytest

from mbrec import synth
from mbrec.data import load_interactions
from mbrec.errors import ConfigError, DataError


def test_generate_exact_budget_and_shapes():
    res = synth.generate(num_users=50, num_items=80, total=1200,
                         clusters=4, seed=0)
    assert len(res.rows) == 1200
    assert res.behaviors == ("view", "cart", "buy")
    assert res.target == "buy"
    rows = np.asarray(res.rows)
    assert rows[:, 0].max() < 50 and rows[:, 1].max() < 80
    # every behavior occurs and every user buys at least once
    assert set(rows[:, 2]) == {0, 1, 2}
    buyers = set(rows[rows[:, 2] == 2][:, 0])
    assert buyers == set(range(50))


def test_generate_deterministic():
    a = synth.generate(num_users=30, num_items=50, total=700, clusters=3,
                       seed=7)
    b = synth.generate(num_users=30, num_items=50, total=700, clusters=3,
                       seed=7)
    assert np.array_equal(np.asarray(a.rows), np.asarray(b.rows))
    assert np.array_equal(a.noisy_users, b.noisy_users)


def test_shifted_noise_reads_next_cluster():
    res = synth.generate(num_users=60, num_items=90, total=2200, clusters=3,
                         noisy_frac=0.5, seed=4, noise_mode="shifted")
    # same seed, same shapes: only the noisy-view item draws change
    base = synth.generate(num_users=60, num_items=90, total=2200, clusters=3,
                          noisy_frac=0.5, seed=4)
    assert np.array_equal(res.noisy_users, base.noisy_users)
    assert len(res.rows) == 2200
    with pytest.raises(ConfigError):
        synth.generate(num_users=20, num_items=30, total=500, clusters=2,
                       noise_mode="wat")


def test_noisy_fraction():
    # per-user coin flips: expect a binomial count around the fraction
    res = synth.generate(num_users=1000, num_items=1200, total=25000,
                         clusters=4, noisy_frac=0.3, seed=1)
    assert 240 <= len(res.noisy_users) <= 360
    none = synth.generate(num_users=50, num_items=80, total=1200,
                          clusters=4, noisy_frac=0.0, seed=1)
    assert len(none.noisy_users) == 0


def test_budget_too_small_raises():
    with pytest.raises(DataError):
        synth.generate(num_users=100, num_items=50, total=150, clusters=4)


def test_written_log_loads(tmp_path):
    res = synth.generate(num_users=40, num_items=60, total=900, clusters=4,
                         seed=3)
    path = str(tmp_path / "log.tsv")
    noisy = str(tmp_path / "noisy.txt")
    synth.write_tsv(res, path, noisy_path=noisy)
    store = load_interactions(path, target="buy")
    assert store.num_users == 40
    assert store.num_items == 60
    assert len(store.triples) <= 900  # dedup may drop repeats
    listed = open(noisy).read().split()
    assert len(listed) == len(res.noisy_users)
