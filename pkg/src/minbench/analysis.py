"""Compatible-use correlation, group disparity and cross-user effects."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dataset import Split
from .errors import ConfigError, DataError
from .metrics import MetricKind, evaluate, improvement
from .minimisation import MinimisationPlan, apply
from .models import ModelConfig, fit_model
from .rng import Rng

DEFAULT_R_MIN = 0.5
DEFAULT_P_MAX = 0.05
DEFAULT_PERMUTATIONS = 1000
MIN_COMPAT_SAMPLES = 8


def _comment_row(**meta) -> str:
    return "# " + ",".join(f"{k}={v}" for k, v in meta.items()) + "\n"


# ---------------------------------------------------------------------------
# Compatibility


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation; NaN when either side has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        return math.nan
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def permutation_pvalue(x, y, n_permutations: int = DEFAULT_PERMUTATIONS, seed: int = 0) -> float:
    """One-sided p-value for a positive correlation under random pairing.

    ``(1 + #{r_perm >= r_obs}) / (n_permutations + 1)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    observed = pearson_r(x, y)
    if math.isnan(observed):
        return 1.0
    rng = Rng(seed, "permutation")
    hits = 0
    for _ in range(n_permutations):
        if pearson_r(x, y[rng.permutation(len(y))]) >= observed - 1e-12:
            hits += 1
    return (1 + hits) / (n_permutations + 1)


@dataclass
class CompatibilityReport:
    purpose_a: str
    purpose_b: str
    pairs: list[tuple[float, float]]
    pearson_r: float
    permutation_p: float
    verdict: str
    r_min: float = DEFAULT_R_MIN
    p_max: float = DEFAULT_P_MAX
    n_permutations: int = DEFAULT_PERMUTATIONS
    seeds: tuple[int, ...] = ()

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(
            _comment_row(
                purpose_a=self.purpose_a,
                purpose_b=self.purpose_b,
                r_min=self.r_min,
                p_max=self.p_max,
                n_permutations=self.n_permutations,
                seeds=";".join(map(str, self.seeds)),
                pearson_r=repr(self.pearson_r),
                permutation_p=repr(self.permutation_p),
                verdict=self.verdict,
            )
        )
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample", "delta_a", "delta_b"])
        for j, (da, db) in enumerate(self.pairs):
            w.writerow([j, repr(float(da)), repr(float(db))])
        return buf.getvalue()


def correlation_verdict(
    pairs: Iterable[tuple[float, float]],
    *,
    purpose_a: str = "a",
    purpose_b: str = "b",
    r_min: float = DEFAULT_R_MIN,
    p_max: float = DEFAULT_P_MAX,
    n_permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
    seeds: Sequence[int] = (),
) -> CompatibilityReport:
    """Classify paired improvements.

    compatible: ``r >= r_min`` and ``p <= p_max``; incompatible: ``r <= 0``;
    otherwise inconclusive, as is any zero-variance side.
    """
    pairs = [(float(a), float(b)) for a, b in pairs]
    if len(pairs) < 3:
        raise DataError("correlation needs at least 3 paired samples")
    x, y = np.array(pairs).T
    r = pearson_r(x, y)
    if math.isnan(r):
        p, verdict = 1.0, "inconclusive"
    else:
        p = permutation_pvalue(x, y, n_permutations, seed)
        if r >= r_min and p <= p_max:
            verdict = "compatible"
        elif r <= 0:
            verdict = "incompatible"
        else:
            verdict = "inconclusive"
    return CompatibilityReport(
        purpose_a, purpose_b, pairs, r, p, verdict, r_min, p_max, n_permutations, tuple(seeds)
    )


@dataclass(frozen=True)
class Task:
    """A processing purpose: a model whose improvement is measured by a metric."""

    model: ModelConfig
    metric: MetricKind
    label: str = ""

    @property
    def name(self) -> str:
        return self.label or f"{self.model.kind}/{self.metric}"


@dataclass(frozen=True)
class Perturbation:
    """Withhold the training data of a seeded ``fraction`` of users.

    ``remove`` measures the change from dropping the slice, ``add`` the
    change from contributing it.
    """

    fraction: float
    direction: str = "remove"

    def __post_init__(self) -> None:
        if not 0.0 < self.fraction < 1.0:
            raise ConfigError("perturbation fraction must be in (0, 1)")
        if self.direction not in ("remove", "add"):
            raise ConfigError(f"unknown perturbation direction {self.direction!r}")


def slice_users(user_ids: Sequence[str], fraction: float, seed: int, index: int) -> list[str]:
    users = sorted(set(map(str, user_ids)))
    count = max(1, min(len(users) - 1, math.floor(fraction * len(users) + 0.5)))
    picked = Rng(seed, "perturbation", index).sample(len(users), count)
    return sorted(users[j] for j in picked)


def _delta(task: Task, split: Split, dropped: list[str], seed: int, direction: str, base) -> float:
    reduced = fit_model(task.model, split.train.without_users(dropped), seed)
    reduced_rep = evaluate(reduced, split, task.metric)
    if direction == "remove":
        return improvement(base, reduced_rep).value
    return improvement(reduced_rep, base).value


def compatibility(
    split: Split,
    task_a: Task,
    task_b: Task,
    schedule: Sequence[Perturbation],
    seeds: Sequence[int],
    *,
    split_b: Split | None = None,
    r_min: float = DEFAULT_R_MIN,
    p_max: float = DEFAULT_P_MAX,
    n_permutations: int = DEFAULT_PERMUTATIONS,
    permutation_seed: int = 0,
) -> CompatibilityReport:
    """Correlate the improvements of two tasks under identical data changes.

    Each (seed, perturbation) pair withholds the same users' data from both
    tasks and records each task's improvement relative to its unperturbed
    model. ``split_b`` lets task b run on a different dataset joined to the
    first by user id.
    """
    split_b = split if split_b is None else split_b
    n = len(schedule) * len(seeds)
    if n < MIN_COMPAT_SAMPLES:
        raise ConfigError(f"compatibility needs >= {MIN_COMPAT_SAMPLES} samples, schedule gives {n}")
    universe = np.union1d(split.train.user_ids, split_b.train.user_ids)

    pairs = []
    for seed in seeds:
        base_a = evaluate(fit_model(task_a.model, split.train, seed), split, task_a.metric)
        base_b = evaluate(fit_model(task_b.model, split_b.train, seed), split_b, task_b.metric)
        for j, pert in enumerate(schedule):
            dropped = slice_users(universe, pert.fraction, seed, j)
            da = _delta(task_a, split, dropped, seed, pert.direction, base_a)
            db = _delta(task_b, split_b, dropped, seed, pert.direction, base_b)
            pairs.append((da, db))
    return correlation_verdict(
        pairs,
        purpose_a=task_a.name,
        purpose_b=task_b.name,
        r_min=r_min,
        p_max=p_max,
        n_permutations=n_permutations,
        seed=permutation_seed,
        seeds=tuple(seeds),
    )


# ---------------------------------------------------------------------------
# Group disparity


@dataclass
class DisparityReport:
    metric: MetricKind
    plan: str
    group_deltas: dict[str, float]
    disparity: float
    group_sizes: dict[str, int]
    per_seed: list[dict[str, float]] = field(default_factory=list)
    seeds: tuple[int, ...] = ()

    @property
    def best_group(self) -> str:
        return max(self.group_deltas, key=lambda g: (self.group_deltas[g], g))

    @property
    def worst_group(self) -> str:
        return min(self.group_deltas, key=lambda g: (self.group_deltas[g], g))

    def gap_per_seed(self, group_a: str | None = None, group_b: str | None = None) -> np.ndarray:
        """Per-seed ``delta[group_a] - delta[group_b]`` (best minus worst by default)."""
        group_a = group_a or self.best_group
        group_b = group_b or self.worst_group
        return np.array([d[group_a] - d[group_b] for d in self.per_seed])

    @property
    def disparity_se(self) -> float:
        """Standard error of the best-minus-worst gap across seeds."""
        gaps = self.gap_per_seed()
        if len(gaps) < 2:
            return math.nan
        return float(gaps.std(ddof=1) / math.sqrt(len(gaps)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(
            _comment_row(
                metric=self.metric,
                plan=self.plan,
                seeds=";".join(map(str, self.seeds)),
                disparity=repr(self.disparity),
                disparity_se=repr(self.disparity_se),
            )
        )
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "n_test_users", "mean_improvement"])
        for g in sorted(self.group_deltas):
            w.writerow([g, self.group_sizes[g], repr(self.group_deltas[g])])
        return buf.getvalue()


def disparity_under_minimisation(
    split: Split,
    model_config: ModelConfig,
    metric: MetricKind | str,
    plan: MinimisationPlan,
    seeds: Sequence[int],
) -> DisparityReport:
    """Per-group improvement from full to minimised training data.

    Values are orientation-normalised, so a minimisation loss is negative.
    Model and plan are both seeded with each seed; deltas are averaged over
    seeds.
    """
    metric = metric if isinstance(metric, MetricKind) else MetricKind.parse(metric)
    if not split.test.has_groups:
        raise DataError("disparity analysis needs group labels")
    if not seeds:
        raise ConfigError("disparity analysis needs at least one seed")
    groups = sorted(set(split.train.group_map.values()) | set(split.test.group_map.values()))
    test_users = split.test.user_ids.tolist()
    sizes = {g: 0 for g in groups}
    for u in test_users:
        g = split.test.group_of(u)
        if g is not None:
            sizes[g] += 1
    empty = [g for g in groups if sizes[g] == 0]
    if empty:
        raise DataError(f"groups without test users: {', '.join(empty)}")

    per_seed = []
    for seed in seeds:
        full = fit_model(model_config, split.train, seed)
        reduced = fit_model(model_config, apply(plan.at(seed=seed), split.train), seed)
        before = evaluate(full, split, metric, "per_group")
        after = evaluate(reduced, split, metric, "per_group")
        per_seed.append(improvement(before, after).value)
    deltas = {g: float(np.mean([d[g] for d in per_seed])) for g in groups}
    spread = max(deltas.values()) - min(deltas.values())
    return DisparityReport(metric, plan.label, deltas, spread, sizes, per_seed, tuple(seeds))


# ---------------------------------------------------------------------------
# Cross-user effects


@dataclass
class CrossUserImpact:
    metric: MetricKind
    removed: tuple[str, ...]
    deltas: dict[str, float]

    @property
    def mean_abs(self) -> float:
        return float(np.mean(np.abs(list(self.deltas.values())))) if self.deltas else 0.0

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(list(self.deltas.values())))) if self.deltas else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(
            _comment_row(
                metric=self.metric,
                removed=";".join(self.removed),
                mean_abs=repr(self.mean_abs),
                max_abs=repr(self.max_abs),
            )
        )
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["user", "improvement"])
        for u, d in sorted(self.deltas.items()):
            w.writerow([u, repr(d)])
        return buf.getvalue()


def cross_user_impact(
    split: Split,
    model_config: ModelConfig,
    metric: MetricKind | str,
    removed_users: Iterable[str],
    seed: int = 0,
) -> CrossUserImpact:
    """How deleting some users' training data changes everyone else's service."""
    metric = metric if isinstance(metric, MetricKind) else MetricKind.parse(metric)
    removed = tuple(sorted({str(u) for u in removed_users}))
    known = set(split.train.user_ids.tolist()) | set(split.test.user_ids.tolist())
    unknown = [u for u in removed if u not in known]
    if unknown:
        raise DataError(f"unknown users: {', '.join(unknown)}")
    reduced_train = split.train.without_users(removed)
    if len(reduced_train) == 0:
        raise DataError("removing these users empties the training set")

    before = evaluate(fit_model(model_config, split.train, seed), split, metric, "per_user")
    after = evaluate(fit_model(model_config, reduced_train, seed), split, metric, "per_user")
    deltas = improvement(before, after).value
    gone = set(removed)
    return CrossUserImpact(metric, removed, {u: d for u, d in deltas.items() if u not in gone})
