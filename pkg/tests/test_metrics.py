import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import ndcg, recall, top_k

from hpmrec.metrics import evaluate, ndcg_at_k, rank_items, recall_at_k


def test_rank_simple():
    assert rank_items([0.1, 0.9, 0.5], k=2).tolist() == [1, 2]


def test_rank_masked_top():
    assert rank_items([0.1, 0.9, 0.5], mask=[1], k=2).tolist() == [2, 0]
    assert rank_items([0.1, 0.9, 0.5], mask=np.array([False, True, False]), k=1).tolist() == [2]


def test_rank_ties_go_to_smaller_index():
    assert rank_items([1.0, 2.0, 2.0, 1.0], k=4).tolist() == [1, 2, 0, 3]


def test_rank_fewer_than_k_unmasked():
    assert rank_items([1.0, 2.0], mask=[0], k=5).tolist() == [1]


def test_rank_matches_full_sort_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 30))
        scores = rng.integers(0, 5, size=n).astype(float) + (rng.random(n) if rng.random() < 0.5 else 0.0)
        masked = sorted(set(rng.integers(0, n, size=int(rng.integers(0, n)))))
        k = int(rng.integers(1, n + 1))
        assert rank_items(scores, masked, k).tolist() == top_k(scores, masked, k)


def test_recall_examples():
    assert recall_at_k([1, 2, 3], [3, 9]) == 0.5
    assert recall_at_k([1, 2, 3], [1, 3]) == 1.0
    assert recall_at_k([1, 2, 3], [7]) == 0.0
    with pytest.raises(ValueError):
        recall_at_k([1], [])


def test_ndcg_examples():
    assert ndcg_at_k([5, 1, 2], [5], 10) == 1.0
    assert ndcg_at_k([1, 5, 2], [5], 10) == pytest.approx(1 / math.log2(3))
    assert ndcg_at_k([1, 5, 2], [5], 10) == pytest.approx(0.6309, abs=1e-4)


def test_metrics_match_oracle():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(2, 40))
        k = int(rng.integers(1, n + 1))
        top = list(rng.permutation(n)[:k])
        truth = list(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False))
        assert abs(recall_at_k(top, truth) - recall(top, truth)) <= 1e-12
        assert abs(ndcg_at_k(top, truth, k) - ndcg(top, truth, k)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_property_ndcg_one_iff_hits_fill_top(data):
    n = data.draw(st.integers(2, 12))
    k = data.draw(st.integers(1, n))
    top = data.draw(st.permutations(range(n)))[:k]
    truth = data.draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=n, unique=True))
    perfect = all(item in truth for item in top[:min(k, len(truth))])
    assert (abs(ndcg_at_k(top, truth, k) - 1.0) < 1e-12) == perfect


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_property_adding_a_hit_never_hurts(data):
    n = data.draw(st.integers(3, 12))
    k = data.draw(st.integers(1, n - 1))
    top = data.draw(st.permutations(range(n)))[:k]
    truth = data.draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=n, unique=True))
    misses = [i for i, item in enumerate(top) if item not in truth]
    spare = [t for t in truth if t not in top]
    if not misses or not spare:
        return
    better = list(top)
    better[data.draw(st.sampled_from(misses))] = spare[0]
    assert recall_at_k(better, truth) >= recall_at_k(top, truth)
    assert ndcg_at_k(better, truth, k) >= ndcg_at_k(top, truth, k) - 1e-15


def test_metrics_ignore_order_outside_top_k():
    rng = np.random.default_rng(2)
    scores = rng.normal(size=20)
    truth = [0, 3, 7]
    top = rank_items(scores, k=5)
    outside = np.setdiff1d(np.arange(20), top)
    shuffled = scores.copy()
    shuffled[outside] = scores[rng.permutation(outside)]
    # keep the permuted values below the top-5 threshold
    shuffled[outside] = np.minimum(shuffled[outside], scores[top].min() - 1)
    top2 = rank_items(shuffled, k=5)
    assert top.tolist() == top2.tolist()
    assert recall_at_k(top, truth) == recall_at_k(top2, truth)


def test_evaluate_matches_per_user_oracle():
    rng = np.random.default_rng(3)
    nu, ni = 15, 25
    users, items = rng.normal(size=(nu, 4)), rng.normal(size=(ni, 4))
    truth = [list(rng.choice(ni, size=int(rng.integers(0, 4)), replace=False)) for _ in range(nu)]
    seen = [[v for v in rng.choice(ni, size=3, replace=False) if v not in truth[u]] for u in range(nu)]
    rep = evaluate(users, items, truth, seen, ks=(5, 10), batch_size=4)
    evaluated = [u for u in range(nu) if truth[u]]
    assert rep.num_users_evaluated == len(evaluated)
    for k in (5, 10):
        r, nd = [], []
        for u in evaluated:
            top = top_k(items @ users[u], seen[u], k)
            r.append(recall(top, truth[u]))
            nd.append(ndcg(top, truth[u], k))
        assert abs(rep.recall[k] - np.mean(r)) <= 1e-12
        assert abs(rep.ndcg[k] - np.mean(nd)) <= 1e-12
    d = rep.as_dict()
    assert {"recall@5", "ndcg@10", "num_users_evaluated"} <= set(d)
