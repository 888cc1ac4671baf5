"""Interaction logs: loading, synthetic generation and train/test splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .rng import Rng

CSV_COLUMNS = ("user", "item", "rating", "timestamp")

# Synthetic generator constants. Latent components have sd d**-0.25 so the
# dot product of a user and an item vector has unit variance.
SYNTH_PREFERENCE_BASE = 0.5
SYNTH_RAW_BOUND = 2.5
SYNTH_RATING_MIN = 1.0
SYNTH_RATING_MAX = 5.0


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    rating: float
    timestamp: int
    group: str | None = None


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _str_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=str)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    return arr


class Dataset:
    """Immutable, column-oriented collection of interactions.

    Duplicate ``(user, item)`` pairs are collapsed on construction: the row
    with the latest timestamp wins, and on equal timestamps the later row.
    Surviving rows keep their input order.
    """

    __slots__ = (
        "users",
        "items",
        "ratings",
        "timestamps",
        "rating_min",
        "rating_max",
        "group_map",
        "_cache",
    )

    def __init__(
        self,
        users,
        items,
        ratings,
        timestamps,
        *,
        rating_min: float | None = None,
        rating_max: float | None = None,
        group_map: Mapping[str, str] | None = None,
        dedupe: bool = True,
        validate: bool = True,
    ) -> None:
        users = _str_array(users)
        items = _str_array(items)
        ratings = np.asarray(ratings, dtype=np.float64).reshape(-1)
        timestamps = np.asarray(timestamps, dtype=np.int64).reshape(-1)
        n = len(users)
        if not (len(items) == len(ratings) == len(timestamps) == n):
            raise DataError("column lengths differ")

        if validate:
            if n and not np.all(np.isfinite(ratings)):
                raise DataError("ratings must be finite")
            if n and timestamps.min() < 0:
                raise DataError("timestamps must be >= 0")
            if n == 0 and (rating_min is None or rating_max is None):
                raise DataError("empty dataset needs explicit rating bounds")
        if rating_min is None:
            rating_min = float(ratings.min())
        if rating_max is None:
            rating_max = float(ratings.max())
        if validate:
            if rating_min > rating_max:
                raise DataError(f"rating_min {rating_min} > rating_max {rating_max}")
            if n and (ratings.min() < rating_min or ratings.max() > rating_max):
                bad = np.flatnonzero((ratings < rating_min) | (ratings > rating_max))[0]
                raise DataError(
                    f"rating {ratings[bad]} outside [{rating_min}, {rating_max}]"
                    f" for ({users[bad]}, {items[bad]})"
                )

        if dedupe and n:
            keep = _dedupe_index(users, items, timestamps)
            if len(keep) < n:
                users, items = users[keep], items[keep]
                ratings, timestamps = ratings[keep], timestamps[keep]

        self.users = _frozen(users)
        self.items = _frozen(items)
        self.ratings = _frozen(ratings)
        self.timestamps = _frozen(timestamps)
        self.rating_min = float(rating_min)
        self.rating_max = float(rating_max)
        self.group_map = dict(group_map) if group_map else {}
        self._cache = {}

    @classmethod
    def from_interactions(
        cls,
        interactions: Iterable[Interaction],
        *,
        rating_min: float | None = None,
        rating_max: float | None = None,
    ) -> Dataset:
        rows = list(interactions)
        group_map: dict[str, str] = {}
        for row in rows:
            if row.group is None:
                continue
            prev = group_map.setdefault(row.user_id, row.group)
            if prev != row.group:
                raise DataError(f"user {row.user_id} has groups {prev!r} and {row.group!r}")
        return cls(
            [r.user_id for r in rows],
            [r.item_id for r in rows],
            [r.rating for r in rows],
            [r.timestamp for r in rows],
            rating_min=rating_min,
            rating_max=rating_max,
            group_map=group_map,
        )

    def __len__(self) -> int:
        return len(self.users)

    def __iter__(self) -> Iterator[Interaction]:
        gm = self.group_map
        for u, i, r, t in zip(self.users, self.items, self.ratings, self.timestamps):
            yield Interaction(str(u), str(i), float(r), int(t), gm.get(str(u)))

    def __repr__(self) -> str:
        return (
            f"Dataset({len(self)} interactions, {len(self.user_ids)} users,"
            f" {len(self.item_ids)} items, ratings in [{self.rating_min}, {self.rating_max}])"
        )

    @property
    def has_groups(self) -> bool:
        return bool(self.group_map)

    @property
    def user_ids(self) -> np.ndarray:
        """Sorted distinct user ids."""
        if "user_ids" not in self._cache:
            self._cache["user_ids"] = _frozen(np.unique(self.users))
        return self._cache["user_ids"]

    @property
    def item_ids(self) -> np.ndarray:
        if "item_ids" not in self._cache:
            self._cache["item_ids"] = _frozen(np.unique(self.items))
        return self._cache["item_ids"]

    def canonical_index(self) -> np.ndarray:
        """Row order sorted by (user_id, item_id)."""
        if "canonical" not in self._cache:
            self._cache["canonical"] = _frozen(np.lexsort((self.items, self.users)))
        return self._cache["canonical"]

    def user_blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(order, starts, user_ids)``: rows of user ``user_ids[j]`` are
        ``order[starts[j]:starts[j + 1]]`` in canonical order."""
        order = self.canonical_index()
        sorted_users = self.users[order]
        uids, starts = np.unique(sorted_users, return_index=True)
        starts = np.append(starts, len(order))
        return order, starts, uids

    def group_of(self, user_id: str) -> str | None:
        return self.group_map.get(str(user_id))

    def groups(self) -> np.ndarray:
        """Per-row group labels ('' where unknown)."""
        gm = self.group_map
        return np.array([gm.get(u, "") for u in self.users.tolist()], dtype=str)

    def take(self, index) -> Dataset:
        """Rows selected by an integer index or boolean mask, same bounds and groups."""
        index = np.asarray(index)
        return Dataset(
            self.users[index],
            self.items[index],
            self.ratings[index],
            self.timestamps[index],
            rating_min=self.rating_min,
            rating_max=self.rating_max,
            group_map=self.group_map,
            dedupe=False,
            validate=False,
        )

    def replace_users(self, users) -> Dataset:
        """Same rows with reassigned owners (used by the shuffle strategy)."""
        return Dataset(
            users,
            self.items,
            self.ratings,
            self.timestamps,
            rating_min=self.rating_min,
            rating_max=self.rating_max,
            group_map=self.group_map,
            dedupe=False,
            validate=False,
        )

    def without_users(self, user_ids: Iterable[str]) -> Dataset:
        drop = np.array(sorted({str(u) for u in user_ids}), dtype=str)
        return self.take(~np.isin(self.users, drop))

    def canonical(self) -> Dataset:
        return self.take(self.canonical_index())

    def concat(self, other: Dataset) -> Dataset:
        gm = dict(self.group_map)
        gm.update(other.group_map)
        return Dataset(
            np.concatenate([self.users, other.users]),
            np.concatenate([self.items, other.items]),
            np.concatenate([self.ratings, other.ratings]),
            np.concatenate([self.timestamps, other.timestamps]),
            rating_min=min(self.rating_min, other.rating_min),
            rating_max=max(self.rating_max, other.rating_max),
            group_map=gm,
            dedupe=False,
            validate=False,
        )

    def profile_sizes(self) -> dict[str, int]:
        uids, counts = np.unique(self.users, return_counts=True)
        return dict(zip(uids.tolist(), counts.tolist()))

    def pairs(self) -> set[tuple[str, str]]:
        return set(zip(self.users.tolist(), self.items.tolist()))

    def rows(self) -> list[tuple[str, str, float, int]]:
        """Canonically ordered ``(user, item, rating, timestamp)`` tuples."""
        order = self.canonical_index()
        return list(
            zip(
                self.users[order].tolist(),
                self.items[order].tolist(),
                self.ratings[order].tolist(),
                self.timestamps[order].tolist(),
            )
        )

    def content_equal(self, other: Dataset) -> bool:
        return (
            self.rows() == other.rows()
            and self.rating_min == other.rating_min
            and self.rating_max == other.rating_max
            and self.group_map == other.group_map
        )


def _dedupe_index(users: np.ndarray, items: np.ndarray, timestamps: np.ndarray) -> np.ndarray:
    pos = np.arange(len(users))
    order = np.lexsort((pos, timestamps, items, users))
    u, i = users[order], items[order]
    last = np.ones(len(order), dtype=bool)
    last[:-1] = (u[:-1] != u[1:]) | (i[:-1] != i[1:])
    return np.sort(order[last])


# ---------------------------------------------------------------------------
# CSV


def load_csv(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    *,
    rating_min: float | None = None,
    rating_max: float | None = None,
) -> Dataset:
    """Read an interaction CSV with a header row.

    ``schema`` maps the logical columns ``user``, ``item``, ``rating``,
    ``timestamp`` and optionally ``group`` to header names in the file.
    """
    path = Path(path)
    schema = {c: c for c in (*CSV_COLUMNS, "group")} | dict(schema or {})
    users, items, ratings, stamps = [], [], [], []
    group_map: dict[str, str] = {}

    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot open: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in CSV_COLUMNS if schema[c] not in header]
        if missing:
            raise DataError(f"{path}: missing columns {', '.join(schema[c] for c in missing)}")
        col = {c: header.index(schema[c]) for c in CSV_COLUMNS}
        gcol = header.index(schema["group"]) if schema["group"] in header else None

        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            user, item = row[col["user"]].strip(), row[col["item"]].strip()
            if not user or not item:
                raise DataError(f"{path}:{line}: empty user or item id")
            try:
                rating = float(row[col["rating"]])
            except ValueError:
                raise DataError(f"{path}:{line}: bad rating {row[col['rating']]!r}") from None
            try:
                stamp = int(row[col["timestamp"]])
            except ValueError:
                raise DataError(
                    f"{path}:{line}: bad timestamp {row[col['timestamp']]!r}"
                ) from None
            if not math.isfinite(rating):
                raise DataError(f"{path}:{line}: non-finite rating")
            if stamp < 0:
                raise DataError(f"{path}:{line}: negative timestamp")
            if (rating_min is not None and rating < rating_min) or (
                rating_max is not None and rating > rating_max
            ):
                raise DataError(
                    f"{path}:{line}: rating {rating} outside [{rating_min}, {rating_max}]"
                )
            if gcol is not None and row[gcol].strip():
                group = row[gcol].strip()
                prev = group_map.setdefault(user, group)
                if prev != group:
                    raise DataError(f"{path}:{line}: user {user} changes group {prev!r} -> {group!r}")
            users.append(user)
            items.append(item)
            ratings.append(rating)
            stamps.append(stamp)

    if not users:
        raise DataError(f"{path}: no interactions")
    return Dataset(
        users,
        items,
        ratings,
        stamps,
        rating_min=rating_min,
        rating_max=rating_max,
        group_map=group_map,
    )


def write_csv(dataset: Dataset, path: str | Path) -> None:
    """Write ``dataset`` in canonical (user, item) order."""
    header = list(CSV_COLUMNS)
    if dataset.has_groups:
        header.append("group")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for u, i, r, t in dataset.rows():
            row = [u, i, repr(r), str(t)]
            if dataset.has_groups:
                row.append(dataset.group_map.get(u, ""))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    n_users: int = 200
    n_items: int = 100
    latent_dim: int = 4
    group_fractions: tuple[tuple[str, float], ...] = ()
    group_preference_shift: float = 0.0
    noise_sd: float = 0.3
    interactions_per_user: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "group_fractions", tuple((str(g), float(f)) for g, f in self.group_fractions)
        )
        for name in ("n_users", "n_items", "latent_dim", "interactions_per_user"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.interactions_per_user > self.n_items:
            raise ConfigError(
                f"interactions_per_user ({self.interactions_per_user})"
                f" exceeds n_items ({self.n_items})"
            )
        if self.group_preference_shift < 0:
            raise ConfigError("group_preference_shift must be >= 0")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")
        if self.group_fractions:
            total = sum(f for _, f in self.group_fractions)
            if abs(total - 1.0) > 1e-9:
                raise ConfigError(f"group fractions sum to {total}, not 1")
            if any(f < 0 for _, f in self.group_fractions):
                raise ConfigError("group fractions must be >= 0")
            labels = [g for g, _ in self.group_fractions]
            if len(set(labels)) != len(labels):
                raise ConfigError("duplicate group label")


def _group_counts(fractions: Sequence[float], total: int) -> list[int]:
    """Largest-remainder apportionment of ``total`` by ``fractions``."""
    raw = [f * total for f in fractions]
    counts = [math.floor(x) for x in raw]
    short = total - sum(counts)
    by_remainder = sorted(range(len(raw)), key=lambda j: (-(raw[j] - counts[j]), j))
    for j in by_remainder[:short]:
        counts[j] += 1
    return counts


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Latent-factor ratings with optional group-displaced user preferences.

    Every user vector is drawn around a shared mean that points along the
    first latent axis; users of the j-th listed group (j >= 1) have that mean
    displaced by ``group_preference_shift`` against latent axis ``j - 1``.
    Raw scores ``p_u . q_i + noise`` are clipped to +-2.5 and mapped linearly
    onto [1, 5]. Each user rates ``interactions_per_user`` distinct items with
    timestamps forming a random permutation of ``1..interactions_per_user``.
    """
    d = spec.latent_dim
    rng = Rng(spec.seed, "synthetic")
    sd = d**-0.25

    if spec.group_fractions:
        labels = [g for g, _ in spec.group_fractions]
        counts = _group_counts([f for _, f in spec.group_fractions], spec.n_users)
    else:
        labels, counts = [None], [spec.n_users]
    user_group = np.repeat(np.arange(len(labels)), counts)

    means = np.zeros((len(labels), d))
    means[:, 0] = SYNTH_PREFERENCE_BASE
    for j in range(1, len(labels)):
        means[j, (j - 1) % d] -= spec.group_preference_shift

    P = means[user_group] + sd * rng.normal(spec.n_users * d).reshape(spec.n_users, d)
    Q = sd * rng.normal(spec.n_items * d).reshape(spec.n_items, d)

    m = spec.interactions_per_user
    item_idx = np.empty((spec.n_users, m), dtype=np.int64)
    stamps = np.empty((spec.n_users, m), dtype=np.int64)
    for u in range(spec.n_users):
        item_idx[u] = rng.sample(spec.n_items, m)
        stamps[u] = rng.permutation(m) + 1
    noise = rng.normal(spec.n_users * m, sd=spec.noise_sd).reshape(spec.n_users, m)

    raw = np.einsum("ud,umd->um", P, Q[item_idx]) + noise
    raw = np.clip(raw, -SYNTH_RAW_BOUND, SYNTH_RAW_BOUND)
    span = SYNTH_RATING_MAX - SYNTH_RATING_MIN
    ratings = SYNTH_RATING_MIN + span * (raw + SYNTH_RAW_BOUND) / (2 * SYNTH_RAW_BOUND)

    uw = len(str(spec.n_users - 1))
    iw = len(str(spec.n_items - 1))
    user_ids = np.array([f"u{u:0{uw}d}" for u in range(spec.n_users)])
    item_ids = np.array([f"i{i:0{iw}d}" for i in range(spec.n_items)])
    group_map = (
        {user_ids[u]: labels[user_group[u]] for u in range(spec.n_users)}
        if spec.group_fractions
        else None
    )
    return Dataset(
        np.repeat(user_ids, m),
        item_ids[item_idx.reshape(-1)],
        ratings.reshape(-1),
        stamps.reshape(-1),
        rating_min=SYNTH_RATING_MIN,
        rating_max=SYNTH_RATING_MAX,
        group_map=group_map,
    )


# ---------------------------------------------------------------------------
# Splits


@dataclass(frozen=True)
class TemporalHoldout:
    """Hold out the latest ``fraction`` of every user's interactions."""

    fraction: float = 0.2

    def __post_init__(self) -> None:
        if not 0.0 <= self.fraction < 1.0:
            raise ConfigError("temporal_holdout fraction must be in [0, 1)")


@dataclass(frozen=True)
class LeaveLastK:
    """Hold out each user's ``k`` latest interactions."""

    k: int = 1

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError("leave_last_k needs k >= 1")


@dataclass(frozen=True, eq=False)
class Split:
    train: Dataset
    test: Dataset
    scheme: TemporalHoldout | LeaveLastK
    seed: int
    cache: dict = field(default_factory=dict, repr=False, compare=False)


def split(dataset: Dataset, scheme: TemporalHoldout | LeaveLastK, seed: int = 0) -> Split:
    """Per-user temporal split; equal timestamps are ordered by a seeded key."""
    order, starts, uids = dataset.user_blocks()
    tiebreak = np.empty(len(dataset), dtype=np.uint64)
    tiebreak[order] = Rng(seed, "split").u64(len(dataset))

    if isinstance(scheme, LeaveLastK):
        sizes = np.diff(starts)
        short = uids[sizes < scheme.k + 1]
        if len(short):
            raise DataError(
                f"users with fewer than {scheme.k + 1} interactions: {', '.join(short.tolist())}"
            )

    is_test = np.zeros(len(dataset), dtype=bool)
    for j in range(len(uids)):
        rows = order[starts[j] : starts[j + 1]]
        n = len(rows)
        if isinstance(scheme, LeaveLastK):
            n_test = scheme.k
        else:
            n_test = min(math.floor(scheme.fraction * n + 0.5), n - 1)
        if n_test <= 0:
            continue
        by_time = rows[np.lexsort((tiebreak[rows], dataset.timestamps[rows]))]
        is_test[by_time[n - n_test :]] = True

    if not is_test.any():
        raise DataError("split produced an empty test set")
    return Split(dataset.take(~is_test), dataset.take(is_test), scheme, seed)
