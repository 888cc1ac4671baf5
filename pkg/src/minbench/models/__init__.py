"""Recommenders of increasing data hunger: popularity < item kNN < MF."""

from __future__ import annotations

from typing import Any, Mapping

from ..dataset import Dataset
from ..errors import ConfigError
from .base import IdIndex, ItemKNNConfig, MFConfig, ModelConfig, PopularityConfig, Recommender
from .knn import ItemKNNModel
from .mf import MFModel
from .popularity import PopularityModel

MODEL_KINDS = {
    "popularity": (PopularityConfig, PopularityModel),
    "item_knn": (ItemKNNConfig, ItemKNNModel),
    "mf_sgd": (MFConfig, MFModel),
}


def make_model(config: ModelConfig) -> Recommender:
    return MODEL_KINDS[config.kind][1](config)


def fit_model(config: ModelConfig, train: Dataset, seed: int = 0) -> Recommender:
    return make_model(config).fit(train, seed)


def fit_popularity(train: Dataset, damping: float = 25.0) -> PopularityModel:
    return PopularityModel(PopularityConfig(damping)).fit(train)


def fit_item_knn(train: Dataset, config: ItemKNNConfig | None = None) -> ItemKNNModel:
    return ItemKNNModel(config).fit(train)


def fit_mf_sgd(train: Dataset, config: MFConfig | None = None, seed: int = 0) -> MFModel:
    return MFModel(config).fit(train, seed)


def model_config(kind: str, params: Mapping[str, Any] | None = None) -> ModelConfig:
    """Build a config from a kind name and keyword parameters."""
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {', '.join(MODEL_KINDS)}")
    cls = MODEL_KINDS[kind][0]
    try:
        return cls(**dict(params or {}))
    except TypeError as exc:
        raise ConfigError(f"{kind}: {exc}") from None


__all__ = [
    "IdIndex",
    "ItemKNNConfig",
    "ItemKNNModel",
    "MFConfig",
    "MFModel",
    "MODEL_KINDS",
    "ModelConfig",
    "PopularityConfig",
    "PopularityModel",
    "Recommender",
    "fit_item_knn",
    "fit_mf_sgd",
    "fit_model",
    "fit_popularity",
    "make_model",
    "model_config",
]
