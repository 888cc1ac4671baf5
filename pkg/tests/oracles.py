"""Independent reference implementations shared by unit and acceptance tests."""

from collections import Counter

from hypothesis import strategies as st

from minbench.dataset import Dataset


def interactions(max_users=5, max_items=10, max_size=40):
    row = st.tuples(
        st.integers(0, max_users - 1).map(lambda u: f"u{u}"),
        st.integers(0, max_items - 1).map(lambda i: f"i{i}"),
        st.integers(1, 5),
        st.integers(0, 8),
    )
    return st.lists(row, min_size=1, max_size=max_size).map(_build)


def _build(rows):
    users, items, ratings, stamps = zip(*rows)
    return Dataset(users, items, ratings, stamps, rating_min=1, rating_max=5)


def profiles(ds):
    out = {}
    for r in ds:
        out.setdefault(r.user_id, []).append((r.item_id, r.rating, r.timestamp))
    return out


def naive_recency(ds, k):
    keep = set()
    for u, rows in profiles(ds).items():
        ranked = sorted(rows, key=lambda t: (-t[2], t[0]))
        keep.update((u, t[0]) for t in ranked[:k])
    return keep


def check_subset(ds, out, k):
    """Output rows are input rows and no user keeps more than ``k``."""
    source = set(ds.rows())
    assert set(out.rows()) <= source
    assert all(n <= k for n in out.profile_sizes().values())


def check_shuffle(ds, out):
    assert out.profile_sizes() == ds.profile_sizes()
    triple = lambda d: Counter(zip(d.items.tolist(), d.ratings.tolist(), d.timestamps.tolist()))
    assert triple(out) == triple(ds)
    assert len(out.pairs()) == len(out)
