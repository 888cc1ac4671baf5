"""Per-user data minimisation strategies."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from ..dataset import Dataset
from ..errors import ConfigError, DataError
from ..rng import Rng

SUBSET_STRATEGIES = ("random", "recency", "popularity", "extreme_value")
STRATEGIES = ("full", *SUBSET_STRATEGIES, "shuffle")


@dataclass(frozen=True)
class MinimisationPlan:
    """A strategy with its per-user budget ``k`` (or swap fraction for shuffle)."""

    strategy: str = "full"
    budget: int | None = None
    fraction: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.strategy in SUBSET_STRATEGIES:
            if self.budget is None or int(self.budget) != self.budget or self.budget < 0:
                raise ConfigError(f"{self.strategy} needs an integer budget k >= 0")
        elif self.budget is not None:
            raise ConfigError(f"{self.strategy} takes no budget")
        if self.strategy == "shuffle":
            if self.fraction is None or not 0.0 <= self.fraction <= 1.0:
                raise ConfigError("shuffle needs a fraction p in [0, 1]")
        elif self.fraction is not None:
            raise ConfigError(f"{self.strategy} takes no fraction")

    @property
    def label(self) -> str:
        if self.strategy in SUBSET_STRATEGIES:
            return f"{self.strategy}({self.budget})"
        if self.strategy == "shuffle":
            return f"shuffle({self.fraction!r})"
        return "full"

    def at(self, budget: int | None = None, seed: int | None = None) -> MinimisationPlan:
        changes = {}
        if budget is not None:
            changes["budget"] = budget
        if seed is not None:
            changes["seed"] = seed
        return replace(self, **changes)


def _top_per_user(train: Dataset, keys: tuple[np.ndarray, ...], k: int) -> Dataset:
    """Keep each user's first ``k`` rows under ``keys`` (primary key first)."""
    order = np.lexsort((*reversed(keys), train.users))
    sorted_users = train.users[order]
    starts = np.ones(len(order), dtype=bool)
    starts[1:] = sorted_users[1:] != sorted_users[:-1]
    block_start = np.maximum.accumulate(np.where(starts, np.arange(len(order)), 0))
    rank = np.arange(len(order)) - block_start
    return train.take(np.sort(order[rank < k]))


def _canonical_draws(train: Dataset, rng: Rng) -> np.ndarray:
    """One uint64 per row, drawn in canonical row order."""
    draws = np.empty(len(train), dtype=np.uint64)
    draws[train.canonical_index()] = rng.u64(len(train))
    return draws


def _shuffle(train: Dataset, p: float, seed: int) -> Dataset:
    n = len(train)
    if len(train.user_ids) < 2:
        raise DataError("shuffle needs at least two users")
    rng = Rng(seed, "shuffle")
    canon = train.canonical_index()
    coin = np.empty(n)
    coin[canon] = rng.random(n)
    selected = np.flatnonzero(coin < p)

    # Group the selected rows by owner (users in random order, rows in random
    # order within each user) and pair position t with t + h. Partners differ
    # unless one user holds more than half of the selection.
    user_rank = dict(zip(train.user_ids.tolist(), rng.permutation(len(train.user_ids)).tolist()))
    owner_rank = np.array([user_rank[u] for u in train.users[selected].tolist()], dtype=np.int64)
    within = rng.u64(len(selected))
    selected = selected[np.lexsort((within, owner_rank))]

    users = train.users.copy()
    items = train.items
    owned = train.pairs()
    h = len(selected) // 2
    for t in range(h):
        a, b = selected[t], selected[t + h]
        ua, ub, ia, ib = users[a], users[b], items[a], items[b]
        if ua == ub:
            continue
        # a swap may not give a user a second rating of the same item
        if ia != ib and ((ub, ia) in owned or (ua, ib) in owned):
            continue
        owned.difference_update({(ua, ia), (ub, ib)})
        owned.update({(ub, ia), (ua, ib)})
        users[a], users[b] = ub, ua
    return train.replace_users(users)


def apply(plan: MinimisationPlan, train: Dataset) -> Dataset:
    """Reduce ``train`` according to ``plan``.

    Subset strategies keep at most ``k`` interactions per user:

    - ``random``: a seeded uniform sample
    - ``recency``: newest first, ties by item id
    - ``popularity``: items with the most ratings in ``train`` first, ties by item id
    - ``extreme_value``: largest ``|rating - user mean|`` first, then newest, then item id

    ``shuffle`` swaps the owners of a seeded fraction of interactions between
    pairs of distinct users; every profile keeps its size.
    """
    s = plan.strategy
    if s == "full" or len(train) == 0:
        return train
    if s == "shuffle":
        return _shuffle(train, plan.fraction, plan.seed)

    k = plan.budget
    if s == "random":
        keys = (_canonical_draws(train, Rng(plan.seed, "random")), train.items)
    elif s == "recency":
        keys = (-train.timestamps, train.items)
    elif s == "popularity":
        iids, inverse, counts = np.unique(train.items, return_inverse=True, return_counts=True)
        keys = (-counts[inverse], train.items)
    else:
        uids, inverse = np.unique(train.users, return_inverse=True)
        canon = train.canonical_index()
        means = np.bincount(inverse[canon], weights=train.ratings[canon]) / np.bincount(inverse)
        keys = (-np.abs(train.ratings - means[inverse]), -train.timestamps, train.items)
    return _top_per_user(train, keys, k)


def apply_sequence(plans: Iterable[MinimisationPlan], train: Dataset) -> Dataset:
    """Apply plans in order; repeated minimisation of an existing store."""
    for plan in plans:
        train = apply(plan, train)
    return train
