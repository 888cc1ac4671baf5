"""Accuracy and ranking metrics with global, per-user and per-group views."""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .dataset import Split
from .errors import ConfigError, DataError
from .models import Recommender
from .rng import Rng

ERROR_METRICS = ("rmse", "mae")
GAIN_METRICS = ("ndcg", "hit_rate")
AGGREGATIONS = ("global_mean", "per_user", "per_group")
DEFAULT_NEGATIVES = 100


@dataclass(frozen=True)
class MetricKind:
    name: str
    k: int | None = None

    def __post_init__(self) -> None:
        if self.name not in ERROR_METRICS + GAIN_METRICS:
            raise ConfigError(f"unknown metric {self.name!r}")
        if self.name in GAIN_METRICS:
            if self.k is None or self.k < 1:
                raise ConfigError(f"{self.name} needs a cutoff k >= 1")
        elif self.k is not None:
            raise ConfigError(f"{self.name} takes no cutoff")

    @classmethod
    def parse(cls, text: str) -> MetricKind:
        """``"rmse"``, ``"mae"``, ``"ndcg@10"``, ``"hit_rate@5"``."""
        m = re.fullmatch(r"\s*([a-z_]+)\s*(?:@\s*(\d+))?\s*", text)
        if not m:
            raise ConfigError(f"cannot parse metric {text!r}")
        return cls(m.group(1), int(m.group(2)) if m.group(2) else None)

    @property
    def higher_is_better(self) -> bool:
        return self.name in GAIN_METRICS

    @property
    def is_ranking(self) -> bool:
        return self.name in GAIN_METRICS

    def __str__(self) -> str:
        return self.name if self.k is None else f"{self.name}@{self.k}"


def _metric(metric: MetricKind | str) -> MetricKind:
    return metric if isinstance(metric, MetricKind) else MetricKind.parse(metric)


@dataclass
class EvalReport:
    metric: MetricKind
    aggregation: str
    value: float | dict[str, float]
    n_evaluated: int
    n_skipped_cold: int = 0

    def scalar(self) -> float:
        """The value itself, or the unweighted mean over scopes."""
        if isinstance(self.value, dict):
            return float(np.mean(list(self.value.values()))) if self.value else math.nan
        return float(self.value)

    def rows(self) -> list[list[str]]:
        if isinstance(self.value, dict):
            items = sorted(self.value.items())
        else:
            items = [("all", self.value)]
        return [
            [str(self.metric), self.aggregation, scope, repr(float(v)),
             str(self.n_evaluated), str(self.n_skipped_cold)]
            for scope, v in items
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        w.writerows(self.rows())
        return buf.getvalue()


REPORT_HEADER = ["metric", "aggregation", "scope", "value", "n_evaluated", "n_skipped"]


# ---------------------------------------------------------------------------
# Ranking primitives


def rank_order(scores: np.ndarray, item_ids: np.ndarray) -> np.ndarray:
    """Indices ordering items by score descending, then item id ascending."""
    return np.lexsort((np.asarray(item_ids, dtype=str), -np.asarray(scores, dtype=np.float64)))


def dcg_discounts(n: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, n + 2))


def ndcg_at_k(scores, relevant, item_ids, k: int) -> float:
    """Binary-relevance NDCG@k with a ``log2(rank + 1)`` discount."""
    relevant = np.asarray(relevant, dtype=bool)
    n_rel = int(relevant.sum())
    if n_rel == 0:
        raise DataError("ndcg needs at least one relevant item")
    ranked = relevant[rank_order(scores, item_ids)][:k]
    disc = dcg_discounts(k)
    dcg = float(np.sum(disc[: len(ranked)][ranked]))
    idcg = float(np.sum(disc[: min(k, n_rel)]))
    return dcg / idcg


def hit_rate_at_k(scores, relevant, item_ids, k: int) -> float:
    relevant = np.asarray(relevant, dtype=bool)
    return float(relevant[rank_order(scores, item_ids)][:k].any())


# ---------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class CandidateSets:
    users: list[str]
    candidates: list[np.ndarray]
    relevant: list[np.ndarray]


def candidate_sets(split: Split, n_negatives: int = DEFAULT_NEGATIVES, seed: int | None = None) -> CandidateSets:
    """Per test user: test items plus ``n_negatives`` sampled unseen items.

    Negatives are drawn from every item in the split that the user has not
    interacted with, using a stream keyed by the user id, so all models and
    minimisation plans are ranked on the same candidates.
    """
    seed = split.seed if seed is None else seed
    key = ("candidates", n_negatives, seed)
    if key in split.cache:
        return split.cache[key]

    universe = np.union1d(split.train.item_ids, split.test.item_ids)
    seen: dict[str, set[str]] = {}
    for u, i in zip(split.train.users.tolist(), split.train.items.tolist()):
        seen.setdefault(u, set()).add(i)
    order, starts, uids = split.test.user_blocks()
    users, cands, rels = [], [], []
    for j, u in enumerate(uids.tolist()):
        test_items = split.test.items[order[starts[j] : starts[j + 1]]]
        exclude = seen.get(u, set()) | set(test_items.tolist())
        pool = np.array([i for i in universe.tolist() if i not in exclude], dtype=str)
        take = min(n_negatives, len(pool))
        negatives = pool[Rng(seed, "negatives", u).sample(len(pool), take)]
        items = np.concatenate([test_items, negatives])
        users.append(u)
        cands.append(items)
        rels.append(np.arange(len(items)) < len(test_items))
    result = CandidateSets(users, cands, rels)
    split.cache[key] = result
    return result


def _pointwise(err: np.ndarray, name: str) -> float:
    if name == "rmse":
        return float(np.sqrt(np.mean(err * err)))
    return float(np.mean(np.abs(err)))


def evaluate(
    model: Recommender,
    split: Split,
    metric: MetricKind | str,
    aggregation: str = "global_mean",
    *,
    n_negatives: int = DEFAULT_NEGATIVES,
    seed: int | None = None,
) -> EvalReport:
    """Score ``model`` on ``split.test``.

    rmse/mae pool all test triples (per user or per group when asked).
    Ranking metrics are computed per test user and averaged with uniform
    user weights. Users without training data are scored by the model's
    fallback, never skipped.
    """
    metric = _metric(metric)
    if aggregation not in AGGREGATIONS:
        raise ConfigError(f"unknown aggregation {aggregation!r}")
    test = split.test
    if len(test) == 0:
        raise DataError("empty test set")
    if aggregation == "per_group" and not test.has_groups:
        raise DataError("per_group aggregation needs a dataset with groups")

    if not metric.is_ranking:
        preds = model.predict_many(test.users, test.items)
        err = preds - test.ratings
        n = len(test)
        if aggregation == "global_mean":
            return EvalReport(metric, aggregation, _pointwise(err, metric.name), n)
        keys = test.users if aggregation == "per_user" else test.groups()
        order = np.argsort(keys, kind="stable")
        scopes, starts = np.unique(keys[order], return_index=True)
        bounds = np.append(starts, n)
        values = {
            str(s): _pointwise(err[order[bounds[j] : bounds[j + 1]]], metric.name)
            for j, s in enumerate(scopes.tolist())
        }
        return EvalReport(metric, aggregation, values, n)

    cs = candidate_sets(split, n_negatives, seed)
    fn = ndcg_at_k if metric.name == "ndcg" else hit_rate_at_k
    per_user = {
        u: fn(model.score_items(u, items), rel, items, metric.k)
        for u, items, rel in zip(cs.users, cs.candidates, cs.relevant)
    }
    n = len(per_user)
    if aggregation == "global_mean":
        return EvalReport(metric, aggregation, float(np.mean(list(per_user.values()))), n)
    if aggregation == "per_user":
        return EvalReport(metric, aggregation, per_user, n)
    by_group: dict[str, list[float]] = {}
    for u, v in per_user.items():
        by_group.setdefault(test.group_of(u) or "", []).append(v)
    return EvalReport(
        metric, aggregation, {g: float(np.mean(v)) for g, v in sorted(by_group.items())}, n
    )


@dataclass
class Improvement:
    """Orientation-normalised change: positive means the service got better."""

    metric: MetricKind
    aggregation: str
    value: float | dict[str, float]
    skipped: set[str] = field(default_factory=set)


def improvement(before: EvalReport, after: EvalReport) -> Improvement:
    if before.metric != after.metric or before.aggregation != after.aggregation:
        raise ConfigError(
            f"cannot compare {before.metric}/{before.aggregation}"
            f" with {after.metric}/{after.aggregation}"
        )
    sign = 1.0 if before.metric.higher_is_better else -1.0
    if not isinstance(before.value, dict):
        return Improvement(before.metric, before.aggregation, sign * (after.value - before.value))
    common = before.value.keys() & after.value.keys()
    skipped = before.value.keys() ^ after.value.keys()
    deltas = {s: sign * (after.value[s] - before.value[s]) for s in sorted(common)}
    return Improvement(before.metric, before.aggregation, deltas, set(skipped))


def disagreement(improvements: Mapping[str, float]) -> bool:
    """True when metrics in a suite disagree on the sign of improvement."""
    signs = {np.sign(v) for v in improvements.values() if v != 0}
    return len(signs) > 1
