import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from minbench.dataset import Dataset, Split, TemporalHoldout
from minbench.errors import ConfigError, DataError
from minbench.metrics import (
    EvalReport,
    MetricKind,
    candidate_sets,
    disagreement,
    evaluate,
    hit_rate_at_k,
    improvement,
    ndcg_at_k,
)
from minbench.models import ItemKNNConfig, MFConfig, PopularityConfig, fit_model

from conftest import make_dataset


class Oracle:
    """Predicts the held-out rating exactly."""

    def __init__(self, test):
        self.truth = {(r.user_id, r.item_id): r.rating for r in test}

    def predict_many(self, users, items):
        return np.array([self.truth.get((u, i), 3.0) for u, i in zip(users, items)])

    def score_items(self, user, items):
        return self.predict_many([user] * len(items), items)


def test_parse_metric_kind():
    assert MetricKind.parse("ndcg@10") == MetricKind("ndcg", 10)
    assert MetricKind.parse("rmse").higher_is_better is False
    assert MetricKind.parse("hit_rate@5").is_ranking
    for bad in ("ndcg", "rmse@3", "auc", "ndcg@0"):
        with pytest.raises(ConfigError):
            MetricKind.parse(bad)


def test_perfect_predictions(small_split):
    m = Oracle(small_split.test)
    assert evaluate(m, small_split, "rmse").value == 0.0
    assert evaluate(m, small_split, "mae").value == 0.0


def test_ndcg_hand_values():
    items = np.array(["a", "b", "c", "d", "e", "f"])
    rel = np.array([False, False, True, False, False, False])
    assert ndcg_at_k(np.array([9, 8, 7, 6, 5, 4.0]), rel, items, 5) == pytest.approx(1 / math.log2(4))
    assert ndcg_at_k(np.array([9, 8, 7, 6, 5, 4.0]), rel, items, 5) == pytest.approx(0.5)
    assert ndcg_at_k(np.array([0, 0, 1.0, 0, 0, 0]), rel, items, 5) == 1.0
    assert ndcg_at_k(np.array([9, 8, 7, 6, 5, 4.0]), rel, items, 2) == 0.0


def test_ties_broken_by_item_id():
    items = np.array(["b", "a"])
    assert hit_rate_at_k(np.zeros(2), np.array([False, True]), items, 1) == 1.0
    assert hit_rate_at_k(np.zeros(2), np.array([True, False]), items, 1) == 0.0


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.integers(-100, 100), min_size=2, max_size=25, unique=True),
    st.data(),
)
def test_ndcg_invariant_under_monotone_transform(scores, data):
    scores = np.array(scores, dtype=np.float64)
    n = len(scores)
    rel = np.array(data.draw(st.lists(st.booleans(), min_size=n, max_size=n)))
    rel[data.draw(st.integers(0, n - 1))] = True
    items = np.array([f"i{j:02d}" for j in range(n)])
    k = data.draw(st.integers(1, n))
    base = ndcg_at_k(scores, rel, items, k)
    for f in (lambda x: 3 * x + 7, np.exp2, lambda x: x**3):
        assert ndcg_at_k(f(scores / 10), rel, items, k) == base
    assert 0.0 <= base <= 1.0
    hits = [hit_rate_at_k(scores, rel, items, kk) for kk in range(1, n + 1)]
    assert all(a <= b for a, b in zip(hits, hits[1:]))


@pytest.mark.parametrize("cfg", [PopularityConfig(), ItemKNNConfig(), MFConfig(epochs=5)], ids=lambda c: c.kind)
def test_rmse_at_least_mae(cfg, small_split):
    m = fit_model(cfg, small_split.train)
    for agg in ("global_mean", "per_user", "per_group"):
        r = evaluate(m, small_split, "rmse", agg)
        a = evaluate(m, small_split, "mae", agg)
        if agg == "global_mean":
            assert r.value >= a.value
        else:
            assert all(r.value[s] >= a.value[s] - 1e-15 for s in r.value)


def test_ranking_global_is_mean_of_per_user(small_split):
    m = fit_model(PopularityConfig(), small_split.train)
    g = evaluate(m, small_split, "ndcg@10", "global_mean", n_negatives=20)
    u = evaluate(m, small_split, "ndcg@10", "per_user", n_negatives=20)
    assert g.value == pytest.approx(np.mean(list(u.value.values())), abs=1e-12)
    assert g.n_evaluated == len(small_split.test.user_ids)


def test_candidates_exclude_seen_items(small_split):
    cs = candidate_sets(small_split, 10)
    seen = small_split.train.pairs()
    for u, items, rel in zip(cs.users, cs.candidates, cs.relevant):
        negs = items[~rel]
        assert len(set(negs.tolist())) == len(negs)
        assert not any((u, i) in seen for i in negs.tolist())
    assert candidate_sets(small_split, 10) is cs


def test_per_group_requires_groups():
    ds = make_dataset([("a", "x", 1, 1), ("a", "y", 2, 2), ("b", "x", 3, 1), ("b", "y", 4, 2)])
    from minbench.dataset import split

    sp = split(ds, TemporalHoldout(0.5))
    m = fit_model(PopularityConfig(), sp.train)
    with pytest.raises(DataError, match="group"):
        evaluate(m, sp, "rmse", "per_group")
    with pytest.raises(ConfigError):
        evaluate(m, sp, "rmse", "per_item")


def test_improvement_orientation():
    rm = MetricKind.parse("rmse")
    nd = MetricKind.parse("ndcg@10")
    assert improvement(EvalReport(rm, "global_mean", 0.9, 1), EvalReport(rm, "global_mean", 0.8, 1)).value == pytest.approx(0.1)
    assert improvement(EvalReport(nd, "global_mean", 0.5, 1), EvalReport(nd, "global_mean", 0.5, 1)).value == 0.0
    with pytest.raises(ConfigError):
        improvement(EvalReport(rm, "global_mean", 0.9, 1), EvalReport(nd, "global_mean", 0.8, 1))


def test_improvement_per_user_skips_missing():
    nd = MetricKind.parse("ndcg@10")
    before = EvalReport(nd, "per_user", {"a": 0.5, "b": 0.2}, 2)
    after = EvalReport(nd, "per_user", {"a": 0.7, "c": 0.9}, 2)
    imp = improvement(before, after)
    assert imp.value == {"a": pytest.approx(0.2)}
    assert imp.skipped == {"b", "c"}


def test_disagreement():
    assert disagreement({"rmse": 0.1, "ndcg@10": -0.02})
    assert not disagreement({"rmse": 0.1, "ndcg@10": 0.0})


def test_report_csv():
    rep = EvalReport(MetricKind.parse("mae"), "per_group", {"b": 0.25, "a": 0.5}, 10)
    assert rep.to_csv().splitlines() == [
        "metric,aggregation,scope,value,n_evaluated,n_skipped",
        "mae,per_group,a,0.5,10,0",
        "mae,per_group,b,0.25,10,0",
    ]
