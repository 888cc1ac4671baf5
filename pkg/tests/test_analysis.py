import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from minbench.analysis import (
    Perturbation,
    Task,
    compatibility,
    correlation_verdict,
    cross_user_impact,
    disparity_under_minimisation,
    pearson_r,
    permutation_pvalue,
    slice_users,
)
from minbench.dataset import Split, SyntheticSpec, TemporalHoldout, generate_synthetic, split
from minbench.errors import ConfigError, DataError
from minbench.metrics import MetricKind
from minbench.minimisation import MinimisationPlan
from minbench.models import MFConfig, PopularityConfig

from conftest import make_dataset

RMSE = MetricKind.parse("rmse")


def test_pearson_matches_numpy(rng_np):
    x, y = rng_np.normal(size=30), rng_np.normal(size=30)
    assert pearson_r(x, y) == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-12)
    assert np.isnan(pearson_r([1, 1, 1], [1, 2, 3]))


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=3, max_size=20, unique=True),
    st.floats(0.01, 100),
    st.floats(-100, 100),
)
def test_affine_pairs_are_compatible(x, scale, shift):
    x = np.array(x)
    if np.ptp(x) < 1e-3:
        return
    rep = correlation_verdict(list(zip(x, scale * x + shift)), n_permutations=200)
    assert rep.pearson_r == pytest.approx(1.0, abs=1e-9)
    if len(x) >= 6:
        assert rep.verdict == "compatible"


def test_anticorrelated_pairs():
    rep = correlation_verdict([(1, 3), (2, 2), (3, 1)])
    assert rep.pearson_r == pytest.approx(-1.0)
    assert rep.verdict == "incompatible"


def test_zero_variance_is_inconclusive():
    rep = correlation_verdict([(1, 0), (2, 0), (3, 0)])
    assert rep.verdict == "inconclusive" and rep.permutation_p == 1.0


def test_correlation_needs_three_pairs():
    with pytest.raises(DataError):
        correlation_verdict([(1, 2), (2, 3)])


def test_permutation_pvalue_properties(rng_np):
    x = rng_np.normal(size=12)
    assert permutation_pvalue(x, x, 499) == pytest.approx(1 / 500, abs=1e-12)
    p = permutation_pvalue(x, rng_np.normal(size=12), 499, seed=3)
    assert 1 / 500 <= p <= 1.0


def test_permutation_pvalue_deterministic(rng_np):
    x, y = rng_np.normal(size=10), rng_np.normal(size=10)
    assert permutation_pvalue(x, y, 300, seed=4) == permutation_pvalue(x, y, 300, seed=4)


def test_slice_users():
    users = [f"u{j}" for j in range(10)]
    a = slice_users(users, 0.3, 1, 0)
    assert len(a) == 3 and a == slice_users(list(reversed(users)), 0.3, 1, 0)
    assert len(slice_users(users, 0.01, 1, 0)) == 1
    assert len(slice_users(users, 0.99, 1, 0)) == 9


def test_perturbation_validation():
    with pytest.raises(ConfigError):
        Perturbation(0.0)
    with pytest.raises(ConfigError):
        Perturbation(0.2, "swap")


def test_compatibility_identical_tasks(small_split):
    task = Task(PopularityConfig(), RMSE)
    rep = compatibility(small_split, task, Task(task.model, RMSE, "copy"), [Perturbation(0.1), Perturbation(0.4)], range(4))
    assert len(rep.pairs) == 8
    assert rep.pearson_r == pytest.approx(1.0, abs=1e-9)
    assert rep.verdict == "compatible"
    csv = rep.to_csv().splitlines()
    assert csv[0].startswith("# purpose_a=") and csv[1] == "sample,delta_a,delta_b"


def test_compatibility_add_direction_flips_sign(small_split):
    task = Task(PopularityConfig(), RMSE)
    sched = [Perturbation(0.2)]
    rm = compatibility(small_split, task, task, sched * 8, range(1))
    add = compatibility(small_split, task, task, [Perturbation(0.2, "add")] * 8, range(1))
    assert [a for a, _ in rm.pairs] == [-a for a, _ in add.pairs]


def test_compatibility_needs_eight_samples(small_split):
    task = Task(PopularityConfig(), RMSE)
    with pytest.raises(ConfigError):
        compatibility(small_split, task, task, [Perturbation(0.2)], range(7))


def test_disparity_full_plan_is_zero(small_split):
    rep = disparity_under_minimisation(small_split, PopularityConfig(), RMSE, MinimisationPlan(), [0, 1])
    assert rep.disparity == 0.0
    assert all(v == 0.0 for v in rep.group_deltas.values())
    assert set(rep.group_sizes) == {"majority", "minority"}
    assert rep.to_csv().splitlines()[1] == "group,n_test_users,mean_improvement"


def test_disparity_needs_groups():
    ds = generate_synthetic(SyntheticSpec(n_users=20, n_items=20, interactions_per_user=5))
    sp = split(ds, TemporalHoldout(0.2))
    with pytest.raises(DataError):
        disparity_under_minimisation(sp, PopularityConfig(), RMSE, MinimisationPlan(), [0])


def test_cross_user_noop_removal():
    train = make_dataset([("a", "x", 4, 1), ("b", "x", 2, 1), ("b", "y", 5, 2)])
    test = make_dataset([("a", "y", 3, 3), ("c", "x", 1, 2)], rating_min=1, rating_max=5)
    sp = Split(train, test, TemporalHoldout(0.2), 0)
    imp = cross_user_impact(sp, MFConfig(latent_dim=2, epochs=5), RMSE, ["c"])
    assert imp.deltas == {"a": 0.0}


def test_cross_user_regression():
    ds = generate_synthetic(SyntheticSpec(n_users=1000, n_items=200, interactions_per_user=20))
    sp = split(ds, TemporalHoldout(0.2), 0)
    imp = cross_user_impact(sp, PopularityConfig(), RMSE, ["u000"])
    assert "u000" not in imp.deltas
    # observed max 0.0099 when frozen
    assert 0.0 < imp.max_abs < 0.02


def test_cross_user_guards(small_split):
    with pytest.raises(DataError, match="empties"):
        cross_user_impact(small_split, PopularityConfig(), RMSE, small_split.train.user_ids)
    with pytest.raises(DataError, match="unknown"):
        cross_user_impact(small_split, PopularityConfig(), RMSE, ["nobody"])
