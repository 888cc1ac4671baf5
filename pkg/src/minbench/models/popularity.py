from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .base import PopularityConfig, Recommender


class PopularityModel(Recommender):
    """Unpersonalised baseline: global mean plus damped item bias.

    ``bias_i = sum(r - mu) / (n_i + damping)``; unknown items score ``mu``.
    """

    def __init__(self, config: PopularityConfig | None = None) -> None:
        super().__init__(config or PopularityConfig())

    def _fit(self, ucodes, icodes, ratings, seed) -> None:
        self.mu = float(ratings.mean())
        n_items = len(self.items)
        counts = np.bincount(icodes, minlength=n_items).astype(np.float64)
        sums = np.bincount(icodes, weights=ratings - self.mu, minlength=n_items)
        self.item_bias = sums / (counts + self.config.damping)
        self.item_counts = counts

    def _predict_codes(self, ucodes, uknown, icodes, iknown) -> np.ndarray:
        return self.mu + np.where(iknown, self.item_bias[icodes], 0.0)

    def dump(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "id", "bias"])
            w.writerow(["global", "", repr(self.mu)])
            for iid, b in zip(self.items.ids.tolist(), self.item_bias.tolist()):
                w.writerow(["item", iid, repr(b)])


def fit_fallback(parent: Recommender, icodes, ratings) -> PopularityModel:
    """Popularity model sharing ``parent``'s vocabulary, for cold-start scoring."""
    model = PopularityModel(PopularityConfig(parent.config.damping))
    model.users, model.items = parent.users, parent.items
    model.rating_min, model.rating_max = parent.rating_min, parent.rating_max
    model.seed, model.train_size = parent.seed, parent.train_size
    model._fit(None, icodes, ratings, parent.seed)
    model.fitted = True
    return model
