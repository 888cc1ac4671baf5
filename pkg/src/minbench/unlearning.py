"""Consent withdrawal by exact retraining, with deterministic cost accounting.

Only exact unlearning is implemented: the withdrawn users' interactions are
dropped and the model is refitted from scratch with its original config and
seed. Approximate unlearning methods would slot in as alternative
``withdraw`` implementations returning the same :class:`Withdrawal`.
"""

from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, DataError
from .models import Recommender, fit_model

log = logging.getLogger(__name__)

LEDGER_HEADER = [
    "event_id",
    "timestamp",
    "users_removed",
    "sgd_updates",
    "similarity_ops",
    "retrains",
    "energy_proxy",
]


@dataclass(frozen=True)
class CostWeights:
    sgd_update: float = 1.0
    similarity_op: float = 1.0
    retrain: float = 0.0

    def __post_init__(self) -> None:
        if min(self.sgd_update, self.similarity_op, self.retrain) < 0:
            raise ConfigError("cost weights must be >= 0")


@dataclass(frozen=True)
class WithdrawalRequest:
    user_ids: frozenset[str]
    timestamp: int = 0

    def __init__(self, user_ids: Iterable[str], timestamp: int = 0) -> None:
        ids = frozenset(str(u) for u in user_ids)
        if not ids:
            raise DataError("a withdrawal request needs at least one user")
        object.__setattr__(self, "user_ids", ids)
        object.__setattr__(self, "timestamp", int(timestamp))


@dataclass(frozen=True)
class CostDelta:
    """Operations spent on one withdrawal."""

    event_id: int
    timestamp: int
    users_removed: tuple[str, ...]
    sgd_updates: int = 0
    similarity_ops: int = 0
    retrains: int = 0

    def energy_proxy(self, weights: CostWeights) -> float:
        return (
            weights.sgd_update * self.sgd_updates
            + weights.similarity_op * self.similarity_ops
            + weights.retrain * self.retrains
        )


@dataclass
class CostLedger:
    """Append-only log of retraining costs; counters only ever grow."""

    weights: CostWeights = field(default_factory=CostWeights)
    events: list[CostDelta] = field(default_factory=list)

    @property
    def sgd_updates(self) -> int:
        return sum(e.sgd_updates for e in self.events)

    @property
    def similarity_ops(self) -> int:
        return sum(e.similarity_ops for e in self.events)

    @property
    def retrain_wall_events(self) -> int:
        return sum(e.retrains for e in self.events)

    @property
    def energy_proxy(self) -> float:
        return sum(e.energy_proxy(self.weights) for e in self.events)

    def record(self, timestamp: int, users: Iterable[str], model: Recommender) -> CostDelta:
        delta = CostDelta(
            event_id=len(self.events),
            timestamp=int(timestamp),
            users_removed=tuple(sorted(users)),
            sgd_updates=model.ops.sgd_updates,
            similarity_ops=model.ops.similarity_ops,
            retrains=1,
        )
        self.events.append(delta)
        return delta

    def rows(self, weights: CostWeights | None = None) -> list[list[str]]:
        weights = weights or self.weights
        return [
            [
                str(e.event_id),
                str(e.timestamp),
                ";".join(e.users_removed),
                str(e.sgd_updates),
                str(e.similarity_ops),
                str(e.retrains),
                repr(e.energy_proxy(weights)),
            ]
            for e in self.events
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LEDGER_HEADER)
        w.writerows(self.rows())
        return buf.getvalue()

    def append_csv(self, path: str | Path, events: Sequence[CostDelta] | None = None) -> None:
        """Append ``events`` (default: all) to a CSV log, writing the header once."""
        path = Path(path)
        events = self.events if events is None else events
        new = not path.exists() or path.stat().st_size == 0
        with path.open("a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(LEDGER_HEADER)
            for row in CostLedger(self.weights, list(events)).rows():
                w.writerow(row)


@dataclass
class Withdrawal:
    model: Recommender
    cost: CostDelta
    remaining: Dataset
    unknown_users: tuple[str, ...] = ()


def withdraw(
    model: Recommender,
    train: Dataset,
    request: WithdrawalRequest,
    seed: int | None = None,
    ledger: CostLedger | None = None,
) -> Withdrawal:
    """Refit ``model``'s config from scratch on ``train`` minus the requested users.

    ``seed`` defaults to the seed ``model`` was fitted with. Unknown user ids
    only produce a warning, so repeating a withdrawal is harmless.
    """
    if not model.fitted:
        raise ValueError("withdraw needs a fitted model")
    seed = model.seed if seed is None else seed
    present = set(train.user_ids.tolist())
    unknown = tuple(sorted(request.user_ids - present))
    if unknown:
        msg = f"withdrawal for users without training data: {', '.join(unknown)}"
        warnings.warn(msg, stacklevel=2)
        log.warning(msg)
    remaining = train.without_users(request.user_ids)
    if len(remaining) == 0:
        raise DataError("withdrawal would leave the training set empty")

    new_model = fit_model(model.config, remaining, seed)
    ledger = ledger if ledger is not None else CostLedger()
    cost = ledger.record(request.timestamp, request.user_ids, new_model)
    return Withdrawal(new_model, cost, remaining, unknown)


@dataclass(frozen=True)
class Exactness:
    exact: bool
    max_deviation: float
    n_probes: int

    def __bool__(self) -> bool:
        return self.exact


def probe_grid(users: Iterable[str], items: Iterable[str]) -> list[tuple[str, str]]:
    return [(u, i) for u in sorted(set(users)) for i in sorted(set(items))]


def verify_exactness(
    model: Recommender, oracle: Recommender, probes: Sequence[tuple[str, str]]
) -> Exactness:
    """Compare predictions on every probe; exact means bit-identical."""
    if len(probes) == 0:
        warnings.warn("empty probe set; exactness holds vacuously", stacklevel=2)
        return Exactness(True, 0.0, 0)
    users, items = zip(*probes)
    a = model.predict_many(users, items)
    b = oracle.predict_many(users, items)
    dev = float(np.max(np.abs(a - b)))
    return Exactness(bool(np.array_equal(a, b)), dev, len(probes))


@dataclass(frozen=True)
class CostReport:
    total: float
    sgd_updates: float
    similarity_ops: float
    retrains: float
    per_event: dict[int, float]


def cost_report(ledger: CostLedger, weights: CostWeights | Sequence[float] | None = None) -> CostReport:
    """Weighted operation counts, in total and per withdrawal event."""
    if weights is None:
        weights = ledger.weights
    elif not isinstance(weights, CostWeights):
        weights = CostWeights(*weights)
    return CostReport(
        total=ledger_total(ledger, weights),
        sgd_updates=weights.sgd_update * ledger.sgd_updates,
        similarity_ops=weights.similarity_op * ledger.similarity_ops,
        retrains=weights.retrain * ledger.retrain_wall_events,
        per_event={e.event_id: e.energy_proxy(weights) for e in ledger.events},
    )


def ledger_total(ledger: CostLedger, weights: CostWeights) -> float:
    return float(sum(e.energy_proxy(weights) for e in ledger.events))
