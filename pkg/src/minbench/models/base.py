from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar, Sequence

import numpy as np

from ..dataset import Dataset
from ..errors import ConfigError, DataError


@dataclass(frozen=True)
class PopularityConfig:
    damping: float = 25.0
    kind: ClassVar[str] = "popularity"

    def __post_init__(self) -> None:
        if self.damping < 0:
            raise ConfigError("damping must be >= 0")


@dataclass(frozen=True)
class ItemKNNConfig:
    neighbors: int = 20
    similarity: str = "cosine"
    damping: float = 25.0  # for the popularity fallback
    kind: ClassVar[str] = "item_knn"

    def __post_init__(self) -> None:
        if self.neighbors < 1:
            raise ConfigError("item_knn needs neighbors >= 1")
        if self.similarity not in ("cosine", "adjusted_cosine"):
            raise ConfigError(f"unknown similarity {self.similarity!r}")


@dataclass(frozen=True)
class MFConfig:
    latent_dim: int = 16
    learning_rate: float = 0.01
    regularization: float = 0.05
    epochs: int = 50
    init_scale: float = 0.1
    # None means "same as learning_rate"; 0 freezes the factor vectors
    factor_learning_rate: float | None = None
    damping: float = 25.0
    kind: ClassVar[str] = "mf_sgd"

    def __post_init__(self) -> None:
        if self.latent_dim < 1:
            raise ConfigError("mf_sgd needs latent_dim >= 1")
        if self.epochs < 1:
            raise ConfigError("mf_sgd needs epochs >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("mf_sgd needs learning_rate > 0")
        if self.regularization < 0:
            raise ConfigError("regularization must be >= 0")
        if self.init_scale < 0:
            raise ConfigError("init_scale must be >= 0")
        if self.factor_learning_rate is not None and self.factor_learning_rate < 0:
            raise ConfigError("factor_learning_rate must be >= 0")


ModelConfig = PopularityConfig | ItemKNNConfig | MFConfig


class IdIndex:
    """Sorted id vocabulary with vectorised lookup."""

    def __init__(self, ids: np.ndarray) -> None:
        self.ids = np.asarray(ids)

    def __len__(self) -> int:
        return len(self.ids)

    def encode(self, values) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(codes, known)``; codes are meaningless where ``known`` is False."""
        values = np.asarray(values, dtype=str)
        if len(self.ids) == 0:
            return np.zeros(len(values), dtype=np.int64), np.zeros(len(values), dtype=bool)
        codes = np.searchsorted(self.ids, values)
        codes = np.minimum(codes, len(self.ids) - 1)
        return codes, self.ids[codes] == values


@dataclass
class OpCounts:
    """Deterministic operation counts accumulated during ``fit``."""

    sgd_updates: int = 0
    similarity_ops: int = 0


class Recommender:
    """Rating predictor fitted on a :class:`Dataset`.

    Subclasses implement ``_fit`` and ``_predict_codes``. Training always
    sees the data in canonical (user, item) order, so row order of the input
    never affects the fitted model.
    """

    config: ModelConfig
    seed: int | None = None
    train_size: int = 0

    def __init__(self, config) -> None:
        self.config = config
        self.ops = OpCounts()
        self.fitted = False

    def fit(self, train: Dataset, seed: int = 0) -> Recommender:
        if len(train) == 0:
            raise DataError("cannot fit on an empty training set")
        train = train.canonical()
        self.seed = int(seed)
        self.rating_min = train.rating_min
        self.rating_max = train.rating_max
        self.users = IdIndex(train.user_ids)
        self.items = IdIndex(train.item_ids)
        self.train_size = len(train)
        ucodes, _ = self.users.encode(train.users)
        icodes, _ = self.items.encode(train.items)
        self._fit(ucodes, icodes, np.array(train.ratings), seed)
        self.fitted = True
        return self

    def _fit(self, ucodes, icodes, ratings, seed) -> None:
        raise NotImplementedError

    def _predict_codes(self, ucodes, uknown, icodes, iknown) -> np.ndarray:
        raise NotImplementedError

    def _check(self) -> None:
        if not self.fitted:
            raise RuntimeError(f"{type(self).__name__} is not fitted")

    def predict_many(self, users: Sequence[str], items: Sequence[str]) -> np.ndarray:
        self._check()
        users = np.asarray(users, dtype=str)
        items = np.asarray(items, dtype=str)
        if len(users) != len(items):
            raise ValueError("users and items differ in length")
        if len(users) == 0:
            return np.zeros(0)
        ucodes, uknown = self.users.encode(users)
        icodes, iknown = self.items.encode(items)
        scores = self._predict_codes(ucodes, uknown, icodes, iknown)
        return np.clip(scores, self.rating_min, self.rating_max)

    def predict(self, user_id: str, item_id: str) -> float:
        return float(self.predict_many([user_id], [item_id])[0])

    def score_items(self, user_id: str, items: Sequence[str]) -> np.ndarray:
        return self.predict_many(np.full(len(items), user_id), items)

    def rank(self, user_id: str, candidates: Sequence[str], k: int) -> list[str]:
        """Top ``k`` distinct candidates by score, ties broken by item id."""
        cands = np.unique(np.asarray(candidates, dtype=str))
        if k < 1 or len(cands) == 0:
            return []
        scores = self.score_items(user_id, cands)
        # cands is sorted, so a stable sort on -score breaks ties by item id
        top = np.argsort(-scores, kind="stable")[:k]
        return cands[top].tolist()
