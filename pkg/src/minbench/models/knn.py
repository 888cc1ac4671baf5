from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy import sparse

from .base import ItemKNNConfig, Recommender
from .popularity import fit_fallback


class ItemKNNModel(Recommender):
    """Item-item neighbourhood model over explicit ratings.

    Similarities are cosines between item rating columns (zeros for missing
    ratings); ``adjusted_cosine`` first subtracts each user's mean rating.
    A prediction for ``(u, i)`` is the similarity-weighted mean of u's
    ratings on the ``neighbors`` most similar items u has rated, counting only
    positive similarities. With no such neighbour the popularity fallback
    is used.
    """

    def __init__(self, config: ItemKNNConfig | None = None) -> None:
        super().__init__(config or ItemKNNConfig())

    def _fit(self, ucodes, icodes, ratings, seed) -> None:
        n_users, n_items = len(self.users), len(self.items)
        self.fallback = fit_fallback(self, icodes, ratings)

        values = ratings
        if self.config.similarity == "adjusted_cosine":
            counts = np.bincount(ucodes, minlength=n_users)
            user_mean = np.bincount(ucodes, weights=ratings, minlength=n_users) / counts
            values = ratings - user_mean[ucodes]
        X = sparse.csr_matrix((values, (ucodes, icodes)), shape=(n_users, n_items))
        gram = np.asarray((X.T @ X).todense())
        norms = np.sqrt(np.diag(gram))
        denom = np.outer(norms, norms)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.sim = np.where(denom > 0, gram / np.where(denom > 0, denom, 1.0), 0.0)
        self.ops.similarity_ops += n_items * (n_items - 1) // 2

        # rows arrive sorted by (user, item), so each profile is item-sorted
        self.user_ptr = np.concatenate([[0], np.cumsum(np.bincount(ucodes, minlength=n_users))])
        self.user_items = icodes.copy()
        self.user_ratings = ratings.copy()

    def _predict_codes(self, ucodes, uknown, icodes, iknown) -> np.ndarray:
        out = self.fallback._predict_codes(ucodes, uknown, icodes, iknown)
        rows = np.flatnonzero(uknown & iknown)
        if rows.size == 0:
            return out
        rows = rows[np.argsort(ucodes[rows], kind="stable")]
        user_of = ucodes[rows]
        cuts = np.flatnonzero(np.diff(user_of)) + 1
        k = self.config.neighbors
        for block in np.split(rows, cuts):
            u = ucodes[block[0]]
            lo, hi = self.user_ptr[u], self.user_ptr[u + 1]
            rated, r = self.user_items[lo:hi], self.user_ratings[lo:hi]
            targets = icodes[block]
            sims = self.sim[np.ix_(targets, rated)]
            sims[targets[:, None] == rated[None, :]] = 0.0
            top = np.argsort(-sims, axis=1, kind="stable")[:, :k]
            s = np.take_along_axis(sims, top, axis=1)
            s = np.where(s > 0.0, s, 0.0)
            wsum = s.sum(axis=1)
            has = wsum > 0
            if has.any():
                out[block[has]] = (s * r[top]).sum(axis=1)[has] / wsum[has]
        return out

    def similarity(self, item_a: str, item_b: str) -> float:
        (a, b), known = self.items.encode([item_a, item_b])
        if not known.all():
            return 0.0
        return float(self.sim[a, b])

    def dump(self, path: str | Path) -> None:
        ids = self.items.ids.tolist()
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["item_a", "item_b", "similarity"])
            a_idx, b_idx = np.nonzero(np.triu(self.sim, k=1))
            for a, b in zip(a_idx.tolist(), b_idx.tolist()):
                w.writerow([ids[a], ids[b], repr(float(self.sim[a, b]))])
