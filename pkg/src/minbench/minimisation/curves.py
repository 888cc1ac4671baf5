"""Learning curves, power-law fits and the data-collection stopping rule."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..dataset import Split
from ..errors import ConfigError, DataError, HarnessError
from ..metrics import MetricKind, evaluate
from ..models import ModelConfig, fit_model
from .strategies import MinimisationPlan, apply

log = logging.getLogger(__name__)

MAX_ITER = 200
STEP_TOL = 1e-10
FLAT_TOL = 1e-9


@dataclass(frozen=True)
class PowerLawFit:
    """``y = a * n**(-b) + c``."""

    a: float
    b: float
    c: float
    residual: float
    iterations: int
    converged: bool

    def predict(self, n) -> np.ndarray | float:
        n = np.asarray(n, dtype=np.float64)
        y = self.a * n ** (-self.b) + self.c
        return float(y) if y.ndim == 0 else y


def _sse(theta, n, y) -> float:
    a, b, c = theta
    r = a * n ** (-b) + c - y
    return float(r @ r)


def fit_power_law(budgets: Sequence[float], values: Sequence[float]) -> PowerLawFit | None:
    """Least-squares fit of a shifted power law with ``b >= 0``.

    Levenberg-Marquardt with Marquardt diagonal scaling, starting from
    ``c = min(y)`` (``max(y)`` for increasing curves), ``b = 0.5`` and ``a``
    chosen to pass through the first point. Steps that would make ``b``
    negative are projected back to 0. Returns None if the fit diverges.
    """
    n = np.asarray(budgets, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    if len(np.unique(n)) < 3:
        raise DataError("a power-law fit needs at least 3 distinct budgets")
    if np.any(n <= 0) or not np.all(np.isfinite(y)):
        raise DataError("budgets must be positive and values finite")

    first = np.argmin(n)
    last = np.argmax(n)
    c0 = y.min() if y[first] >= y[last] else y.max()
    theta = np.array([(y[first] - c0) * n[first] ** 0.5, 0.5, c0])
    sse = _sse(theta, n, y)
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        a, b, c = theta
        nb = n ** (-b)
        r = a * nb + c - y
        J = np.column_stack([nb, -a * np.log(n) * nb, np.ones_like(n)])
        A = J.T @ J
        g = J.T @ r
        if sse == 0.0 or not np.any(g):
            converged = True
            break
        scale = np.diag(A).copy()
        scale[scale <= 0] = 1.0
        try:
            step = np.linalg.solve(A + lam * np.diag(scale), -g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        cand = theta + step
        cand[1] = max(cand[1], 0.0)
        cand_sse = _sse(cand, n, y)
        if not math.isfinite(cand_sse):
            lam *= 10.0
        elif cand_sse <= sse:
            step = cand - theta
            theta, sse = cand, cand_sse
            lam = max(lam / 10.0, 1e-12)
        else:
            lam *= 10.0
        if np.max(np.abs(step)) <= STEP_TOL * (1.0 + np.max(np.abs(theta))):
            converged = True
            break
        if lam > 1e16:
            converged = True
            break

    if not np.all(np.isfinite(theta)):
        return None
    a, b, c = (float(v) for v in theta)
    # a vanishing amplitude leaves b unidentifiable: report the flat curve
    if abs(a) * n.min() ** (-b) <= FLAT_TOL * (1.0 + abs(c)):
        a, b = 0.0, 0.0
    resid = math.sqrt(_sse((a, b, c), n, y) / len(n))
    return PowerLawFit(a, b, c, resid, it, converged)


@dataclass
class LearningCurve:
    metric: MetricKind
    points: list[tuple[int, float, int]]
    fit: PowerLawFit | None = None
    label: str = ""

    @property
    def higher_is_better(self) -> bool:
        return self.metric.higher_is_better

    def means(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct budgets and the mean of finite values at each."""
        by_budget: dict[int, list[float]] = {}
        for budget, value, _ in self.points:
            if math.isfinite(value):
                by_budget.setdefault(budget, []).append(value)
        budgets = np.array(sorted(by_budget), dtype=np.float64)
        return budgets, np.array([np.mean(by_budget[int(b)]) for b in budgets])

    def refit(self) -> LearningCurve:
        budgets, means = self.means()
        try:
            self.fit = fit_power_law(budgets, means) if len(budgets) >= 3 else None
        except DataError:
            self.fit = None
        return self

    def points_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["budget", "seed", "metric_value"])
        for budget, value, seed in sorted(self.points, key=lambda p: (p[0], p[2])):
            w.writerow([budget, seed, repr(float(value))])
        return buf.getvalue()

    def fit_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["a", "b", "c", "residual"])
        if self.fit is None:
            w.writerow(["", "", "", ""])
        else:
            f = self.fit
            w.writerow([repr(f.a), repr(f.b), repr(f.c), repr(f.residual)])
        return buf.getvalue()


def curve_point(
    split: Split,
    model_config: ModelConfig,
    metric: MetricKind,
    plan: MinimisationPlan,
    seed: int,
) -> float:
    """Metric value after minimising ``split.train`` with ``plan`` and refitting."""
    train = apply(plan, split.train)
    model = fit_model(model_config, train, seed)
    return evaluate(model, split, metric, "global_mean").scalar()


def build_learning_curve(
    split: Split,
    model_config: ModelConfig,
    metric: MetricKind | str,
    plan_family: MinimisationPlan | str,
    grid: Sequence[int],
    seeds: Sequence[int],
) -> LearningCurve:
    """Evaluate ``plan_family`` at every budget in ``grid`` for every seed.

    The plan and the model are both seeded with the cell seed. Cells whose
    training diverges are kept as NaN points; the power law is fitted to the
    per-budget means of the remaining points.
    """
    metric = metric if isinstance(metric, MetricKind) else MetricKind.parse(metric)
    if isinstance(plan_family, str):
        plan_family = MinimisationPlan(plan_family, budget=0)
    grid = [int(k) for k in grid]
    if len(set(grid)) < 3:
        raise ConfigError("a learning curve needs at least 3 budgets")
    if any(k < 1 for k in grid):
        raise ConfigError("learning-curve budgets must be >= 1")
    if not seeds:
        raise ConfigError("a learning curve needs at least one seed")

    points = []
    for k in grid:
        for seed in seeds:
            try:
                value = curve_point(split, model_config, metric, plan_family.at(k, seed), seed)
            except HarnessError as exc:
                log.warning("curve cell budget=%d seed=%d failed: %s", k, seed, exc)
                value = math.nan
            points.append((k, value, int(seed)))
    label = f"{model_config.kind}/{plan_family.strategy}/{metric}"
    return LearningCurve(metric, points, label=label).refit()


@dataclass(frozen=True)
class StoppingRule:
    epsilon: float
    grid: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "grid", tuple(int(k) for k in self.grid))
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0")
        if not self.grid or any(k < 1 for k in self.grid):
            raise ConfigError("stopping grid budgets must be >= 1")
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise ConfigError("stopping grid must be strictly increasing")


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    budget: int | None
    predicted_gains: dict[int, float] = field(default_factory=dict)

    def __str__(self) -> str:
        return f"stop_at_budget {self.budget}" if self.stop else "continue"


def predicted_gain(fit: PowerLawFit, k: float, higher_is_better: bool = False) -> float:
    """Predicted improvement from doubling the budget from ``k``."""
    delta = fit.predict(2 * k) - fit.predict(k)
    return delta if higher_is_better else -delta


def decide_stop(curve: LearningCurve, rule: StoppingRule) -> StopDecision:
    """Smallest budget whose predicted doubling gain is below ``epsilon``."""
    if curve.fit is None:
        raise DataError("curve unfit")
    gains = {}
    for k in rule.grid:
        gains[k] = predicted_gain(curve.fit, k, curve.higher_is_better)
        if abs(gains[k]) < rule.epsilon:
            return StopDecision(True, k, gains)
    return StopDecision(False, None, gains)


@dataclass(frozen=True)
class PredictionError:
    max_abs: float
    mean_abs: float
    per_budget: dict[int, float]


def prediction_error(
    curve: LearningCurve,
    holdout: Mapping[int, float | Iterable[float]] | Iterable[tuple[int, float]],
) -> PredictionError:
    """Absolute extrapolation error of the fitted curve at held-out budgets.

    ``holdout`` maps budgets to observed values (several observations at one
    budget are averaged).
    """
    if curve.fit is None:
        raise DataError("curve unfit")
    items = holdout.items() if isinstance(holdout, Mapping) else holdout
    observed: dict[int, float] = {}
    for budget, value in items:
        vals = np.atleast_1d(np.asarray(value, dtype=np.float64))
        observed[int(budget)] = float(vals.mean())
    if not observed:
        raise DataError("empty holdout set")
    fitted = {int(b) for b in curve.means()[0]}
    overlap = sorted(fitted & observed.keys())
    if overlap:
        raise DataError(f"holdout budgets overlap fitted budgets: {overlap}")
    per = {k: abs(curve.fit.predict(k) - v) for k, v in sorted(observed.items())}
    errs = np.array(list(per.values()))
    return PredictionError(float(errs.max()), float(errs.mean()), per)
