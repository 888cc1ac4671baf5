import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from minbench.dataset import (
    Dataset,
    LeaveLastK,
    SyntheticSpec,
    TemporalHoldout,
    generate_synthetic,
    load_csv,
    split,
    write_csv,
)
from minbench.errors import ConfigError, DataError

from conftest import make_dataset


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_dedupes_latest_timestamp(tmp_path):
    p = _write(tmp_path / "a.csv", "user,item,rating,timestamp\nu1,i1,2,5\nu1,i2,4,6\nu1,i1,5,9\n")
    ds = load_csv(p)
    assert len(ds) == 2
    row = [r for r in ds if r.item_id == "i1"][0]
    assert row.timestamp == 9 and row.rating == 5.0


def test_equal_timestamps_later_row_wins():
    ds = make_dataset([("u", "i", 1.0, 3), ("u", "i", 2.0, 3)])
    assert ds.rows() == [("u", "i", 2.0, 3)]


def test_load_infers_bounds(tmp_path):
    p = _write(tmp_path / "b.csv", "user,item,rating,timestamp\nu1,i1,1,1\nu2,i1,5,2\n")
    ds = load_csv(p)
    assert (ds.rating_min, ds.rating_max) == (1.0, 5.0)


def test_load_bad_rating_reports_line(tmp_path):
    p = _write(tmp_path / "c.csv", "user,item,rating,timestamp\nu0,i0,3,1\nu1,i1,abc,10\n")
    with pytest.raises(DataError, match=r"c\.csv:3"):
        load_csv(p)


@pytest.mark.parametrize(
    "body, pattern",
    [
        ("", "empty file"),
        ("user,item,rating,timestamp\n", "no interactions"),
        ("user,item,rating\nu,i,1\n", "missing columns"),
        ("user,item,rating,timestamp\nu,i,1,-4\n", "negative timestamp"),
        ("user,item,rating,timestamp\nu,i,nan,1\n", "non-finite"),
        ("user,item,rating,timestamp\nu,i,1\n", "expected 4 fields"),
    ],
)
def test_load_errors(tmp_path, body, pattern):
    with pytest.raises(DataError, match=pattern):
        load_csv(_write(tmp_path / "d.csv", body))


def test_load_bounds_override_rejects_outside(tmp_path):
    p = _write(tmp_path / "e.csv", "user,item,rating,timestamp\nu,i,6,1\n")
    with pytest.raises(DataError, match="outside"):
        load_csv(p, rating_min=1, rating_max=5)


def test_load_schema_and_groups(tmp_path):
    p = _write(tmp_path / "f.csv", "uid,iid,r,ts,grp\nu1,i1,3,1,a\nu2,i1,4,2,b\n")
    ds = load_csv(p, {"user": "uid", "item": "iid", "rating": "r", "timestamp": "ts", "group": "grp"})
    assert ds.group_of("u2") == "b"


def test_csv_round_trip(tmp_path, small_data):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(small_data, a)
    again = load_csv(a, rating_min=1, rating_max=5)
    write_csv(again, b)
    assert a.read_bytes() == b.read_bytes()
    assert again.content_equal(small_data)


def test_dataset_is_immutable(small_data):
    with pytest.raises(ValueError):
        small_data.ratings[0] = 1.0


def test_synthetic_determinism():
    spec = SyntheticSpec(noise_sd=0.0, group_preference_shift=0.0, seed=7)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert a.rows() == b.rows()


def test_synthetic_counts():
    ds = generate_synthetic(SyntheticSpec(n_users=100, interactions_per_user=20))
    assert len(ds) == 2000
    assert set(ds.profile_sizes().values()) == {20}
    assert ds.ratings.min() >= 1.0 and ds.ratings.max() <= 5.0


def test_synthetic_group_shift_moves_ratings():
    ds = generate_synthetic(
        SyntheticSpec(
            n_users=500,
            n_items=100,
            group_fractions=(("majority", 0.8), ("minority", 0.2)),
            group_preference_shift=2.0,
            interactions_per_user=30,
            seed=3,
        )
    )
    groups = ds.groups()
    maj = groups == "majority"
    assert maj.sum() == 0.8 * len(ds)
    # the half of the catalogue the majority rates highest
    items = np.unique(ds.items)
    means = np.array([ds.ratings[maj & (ds.items == i)].mean() for i in items])
    liked = np.isin(ds.items, items[np.argsort(-means)[: len(items) // 2]])
    gap = ds.ratings[liked & maj].mean() - ds.ratings[liked & ~maj].mean()
    assert abs(gap) > 0.1


@pytest.mark.parametrize(
    "kw",
    [
        {"n_users": 0},
        {"interactions_per_user": 200, "n_items": 100},
        {"noise_sd": -1.0},
        {"group_preference_shift": -0.5},
    ],
)
def test_synthetic_spec_validation(kw):
    with pytest.raises(ConfigError):
        SyntheticSpec(**kw)


def test_leave_last_k():
    ds = make_dataset([("u", "a", 1, 1), ("u", "b", 2, 2), ("u", "c", 3, 3)])
    sp = split(ds, LeaveLastK(1))
    assert sp.test.rows() == [("u", "c", 3.0, 3)]
    assert sorted(r[1] for r in sp.train.rows()) == ["a", "b"]


def test_leave_last_k_lists_short_users():
    ds = make_dataset([("u", "a", 1, 1), ("v", "a", 1, 1), ("v", "b", 1, 2)])
    with pytest.raises(DataError, match="u"):
        split(ds, LeaveLastK(1))


def test_zero_holdout_is_an_error(small_data):
    with pytest.raises(DataError, match="empty test set"):
        split(small_data, TemporalHoldout(0.0))


def test_split_determinism_and_partition(small_data):
    a = split(small_data, TemporalHoldout(0.3), 4)
    b = split(small_data, TemporalHoldout(0.3), 4)
    assert a.train.rows() == b.train.rows() and a.test.rows() == b.test.rows()
    assert a.train.pairs().isdisjoint(a.test.pairs())
    assert len(a.train) + len(a.test) == len(small_data)


def test_split_test_is_latest(small_data):
    sp = split(small_data, TemporalHoldout(0.2))
    last_train = {}
    for r in sp.train:
        last_train[r.user_id] = max(last_train.get(r.user_id, 0), r.timestamp)
    assert all(r.timestamp > last_train[r.user_id] for r in sp.test)


rows = st.lists(
    st.tuples(
        st.sampled_from(["u1", "u2", "u3"]),
        st.sampled_from(["a", "b", "c", "d"]),
        st.integers(1, 5),
        st.integers(0, 5),
    ),
    min_size=1,
    max_size=30,
)


@settings(max_examples=200, deadline=None)
@given(rows, st.randoms(use_true_random=False))
def test_dedupe_is_order_independent(data, rnd):
    shuffled = list(data)
    rnd.shuffle(shuffled)
    a = make_dataset(data, rating_min=1, rating_max=5)
    b = make_dataset(shuffled, rating_min=1, rating_max=5)
    # pairs and their timestamps agree; equal-timestamp ties may pick another row
    key = lambda d: sorted((r[0], r[1], r[3]) for r in d.rows())
    assert key(a) == key(b)
    assert len(a.pairs()) == len(a)
