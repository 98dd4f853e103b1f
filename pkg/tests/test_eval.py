"""Ranking metrics and candidate assembly."""

import numpy as np
import pytest

from mbrec.autodiff import Tensor
from mbrec.data import InteractionStore, SplitAssignment
from mbrec.encoder import EmbeddingState
from mbrec.errors import ConfigError
from mbrec.eval import (MetricReport, build_tasks, evaluate,
                        rank_of_positive, sample_eval_negatives)


def make_state(users, items):
    u = Tensor(np.asarray(users, dtype=np.float64))
    i = Tensor(np.asarray(items, dtype=np.float64))
    return EmbeddingState(layer_user=[], layer_item=[], beh_user=[],
                          beh_item=[], final_user=u, final_item=i,
                          beh_final_user=[], beh_final_item=[])


def make_split(test, train_rows, num_users, num_items, behaviors=("t",)):
    store = InteractionStore(
        num_users=num_users, num_items=num_items,
        triples=np.asarray(train_rows, dtype=np.int64).reshape(-1, 3),
        behavior_names=list(behaviors), target_index=len(behaviors) - 1)
    split = SplitAssignment(
        test=dict(test),
        meta=np.empty((0, 3), dtype=np.int64),
        train=np.asarray(train_rows, dtype=np.int64).reshape(-1, 3))
    return store, split


def test_rank_basics():
    scores = np.array([0.5, 0.9, 0.1, 0.7])
    cands = np.array([10, 11, 12, 13])
    assert rank_of_positive(scores, cands) == 3  # 0.9 and 0.7 beat it
    assert rank_of_positive(np.array([2.0, 1.0]), np.array([5, 6])) == 1
    assert rank_of_positive(np.array([0.0, 0.0, 0.0]),
                            np.array([7, 3, 9])) == 2  # item 3 wins the tie


def test_tie_breaks_toward_lower_index_deterministically():
    # positive has the lowest index: ties cannot push it down
    scores = np.zeros(5)
    cands = np.array([0, 4, 3, 2, 1])
    assert rank_of_positive(scores, cands) == 1
    # positive has the highest index: every tie beats it
    cands = np.array([4, 0, 1, 2, 3])
    assert rank_of_positive(scores, cands) == 5


def test_ndcg_closed_forms():
    # rank 1 -> 1.0; rank 3 -> 1/log2(4) = 0.5; rank k+1 -> 0
    users = [[1.0, 0.0]]
    # positive item 0 scores 1.0; two items beat it at 2.0 and 1.5
    items = [[1.0, 0.0], [2.0, 0.0], [1.5, 0.0], [0.5, 0.0]]
    store, split = make_split({0: 0}, [[0, 0, 0]], 1, 4)
    report = evaluate(make_state(users, items), store, split, k=10,
                      protocol="full")
    assert report.hr == 1.0
    assert abs(report.ndcg - 0.5) < 1e-12  # exactly 1/log2(3+1)

    items_top = [[5.0, 0.0], [2.0, 0.0], [1.5, 0.0], [0.5, 0.0]]
    report = evaluate(make_state(users, items_top), store, split, k=10,
                      protocol="full")
    assert report.hr == 1.0 and abs(report.ndcg - 1.0) < 1e-15

    report = evaluate(make_state(users, items), store, split, k=2,
                      protocol="full")
    assert report.hr == 0.0 and report.ndcg == 0.0  # rank 3 misses k=2


def test_metric_is_mean_over_users():
    users = [[1.0], [1.0]]
    items = [[3.0], [2.0], [1.0]]
    # user 0's positive is item 0 (rank 1), user 1's is item 2 (rank 3)
    store, split = make_split({0: 0, 1: 2}, [[0, 0, 0], [1, 2, 0]], 2, 3)
    report = evaluate(make_state(users, items), store, split, k=10,
                      protocol="full")
    assert abs(report.hr - 1.0) < 1e-15
    assert abs(report.ndcg - (1.0 + 0.5) / 2) < 1e-12
    assert report.num_evaluated == 2


def test_full_protocol_excludes_known_targets():
    # user 0 bought items 1 and 2 in train; they must not be candidates
    store, split = make_split({0: 0}, [[0, 1, 0], [0, 2, 0]], 1, 5)
    tasks = build_tasks(store, split, protocol="full")
    assert tasks[0].candidates[0] == 0
    assert set(tasks[0].candidates) == {0, 3, 4}


def test_sampled_protocol_excludes_and_seeds():
    rows = [[0, j, 0] for j in range(1, 40)]
    store, split = make_split({0: 0}, rows, 1, 200)
    a = build_tasks(store, split, protocol="sampled", num_negatives=50,
                    seed=7)
    b = build_tasks(store, split, protocol="sampled", num_negatives=50,
                    seed=7)
    c = build_tasks(store, split, protocol="sampled", num_negatives=50,
                    seed=8)
    assert np.array_equal(a[0].candidates, b[0].candidates)
    assert not np.array_equal(a[0].candidates, c[0].candidates)
    assert len(a[0].candidates) == 51
    known = set(range(40))
    assert not (set(a[0].candidates[1:]) & known)


def test_negative_sampling_degrades_when_pool_small():
    store, split = make_split({0: 0}, [[0, 1, 0]], 1, 4)
    rng = np.random.default_rng(0)
    negs = sample_eval_negatives(store, {0, 1}, 99, rng)
    assert set(negs) == {2, 3}


def test_adding_weaker_candidate_never_improves_rank():
    users = [[1.0, 0.0]]
    items = [[1.0, 0.0], [2.0, 0.0], [0.5, 0.0], [-100.0, 0.0]]
    scores_small = np.array([1.0, 2.0])
    scores_big = np.array([1.0, 2.0, 0.5, -100.0])
    r_small = rank_of_positive(scores_small, np.array([0, 1]))
    r_big = rank_of_positive(scores_big, np.array([0, 1, 2, 3]))
    assert r_small == r_big == 2


def test_evaluate_validation():
    users, items = [[1.0]], [[1.0], [2.0]]
    store, split = make_split({0: 0}, [[0, 0, 0]], 1, 2)
    with pytest.raises(ConfigError):
        evaluate(make_state(users, items), store, split, k=0)
    with pytest.raises(ConfigError):
        build_tasks(store, split, protocol="exhaustive")


def test_report_line_format():
    r = MetricReport(hr=0.5, ndcg=0.25, k=10, protocol="sampled",
                     num_evaluated=7, num_skipped=1)
    assert r.line() == "HR@10=0.5000 NDCG@10=0.2500 (sampled, 7 users, 1 skipped)"


def test_brute_force_tiny_case():
    # hand-scored: u0=(1,2), items scored by dot product
    users = [[1.0, 2.0]]
    items = [[0.0, 1.0],   # pos, score 2
             [1.0, 1.0],   # score 3
             [0.0, 0.5],   # score 1
             [2.0, 0.0]]   # score 2, tie with pos but higher index loses
    store, split = make_split({0: 0}, [[0, 0, 0]], 1, 4)
    tasks = build_tasks(store, split, protocol="full")
    state = make_state(users, items)
    scores = state.final_item.data[tasks[0].candidates] @ state.final_user.data[0]
    assert rank_of_positive(scores, tasks[0].candidates) == 2
    report = evaluate(state, store, split, k=10, protocol="full")
    assert abs(report.ndcg - 1.0 / np.log2(3)) < 1e-12
