from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from numba import njit

from ..errors import TrainingDivergedError
from ..rng import Rng, next_float, shuffle_inplace
from .base import MFConfig, Recommender
from .popularity import fit_fallback


@njit(cache=True)
def pointwise_loss(r, mu, b_u, b_i, p, q, reg):
    """``(r - mu - b_u - b_i - p.q)**2 + reg * (|p|**2 + |q|**2 + b_u**2 + b_i**2)``."""
    e = r - mu - b_u - b_i - np.dot(p, q)
    return e * e + reg * (np.dot(p, p) + np.dot(q, q) + b_u * b_u + b_i * b_i)


@njit(cache=True)
def sgd_step(r, mu, bu, bi, P, Q, u, i, lr, flr, reg):
    """One gradient step on :func:`pointwise_loss` for example ``(u, i, r)``.

    All gradients are taken at the pre-update parameters. Biases move with
    ``lr``, factor vectors with ``flr``. Returns the residual.
    """
    dim = P.shape[1]
    dot = 0.0
    for f in range(dim):
        dot += P[u, f] * Q[i, f]
    e = r - (mu + bu[u] + bi[i] + dot)
    bu[u] -= lr * (-2.0 * e + 2.0 * reg * bu[u])
    bi[i] -= lr * (-2.0 * e + 2.0 * reg * bi[i])
    for f in range(dim):
        pf = P[u, f]
        qf = Q[i, f]
        P[u, f] = pf - flr * (-2.0 * e * qf + 2.0 * reg * pf)
        Q[i, f] = qf - flr * (-2.0 * e * pf + 2.0 * reg * qf)
    return e


@njit(cache=True)
def objective(users, items, ratings, mu, bu, bi, P, Q, reg):
    total = 0.0
    for t in range(ratings.shape[0]):
        u = users[t]
        i = items[t]
        total += pointwise_loss(ratings[t], mu, bu[u], bi[i], P[u], Q[i], reg)
    return total


@njit(cache=True)
def _train(users, items, ratings, n_users, n_items, dim, lr, flr, reg, epochs, init_scale, state):
    n = ratings.shape[0]
    mu = 0.0
    for t in range(n):
        mu += ratings[t]
    mu /= n

    P = np.empty((n_users, dim))
    Q = np.empty((n_items, dim))
    for u in range(n_users):
        for f in range(dim):
            P[u, f] = init_scale * (2.0 * next_float(state) - 1.0)
    for i in range(n_items):
        for f in range(dim):
            Q[i, f] = init_scale * (2.0 * next_float(state) - 1.0)
    bu = np.zeros(n_users)
    bi = np.zeros(n_items)

    losses = np.empty(epochs)
    order = np.arange(n)
    for ep in range(epochs):
        shuffle_inplace(state, order)
        for t in range(n):
            k = order[t]
            sgd_step(ratings[k], mu, bu, bi, P, Q, users[k], items[k], lr, flr, reg)
        loss = objective(users, items, ratings, mu, bu, bi, P, Q, reg)
        losses[ep] = loss
        if not np.isfinite(loss):
            return mu, bu, bi, P, Q, losses[: ep + 1], ep
    return mu, bu, bi, P, Q, losses, -1


class MFModel(Recommender):
    """Biased matrix factorisation trained by plain SGD.

    Each epoch visits the training examples in a fresh permutation drawn
    from the seeded stream; factors start uniform in ``+-init_scale`` and
    biases at zero. Users or items absent from training are scored by the
    popularity fallback.
    """

    def __init__(self, config: MFConfig | None = None) -> None:
        super().__init__(config or MFConfig())

    def _fit(self, ucodes, icodes, ratings, seed) -> None:
        cfg = self.config
        flr = cfg.learning_rate if cfg.factor_learning_rate is None else cfg.factor_learning_rate
        rng = Rng(seed, "mf_sgd")
        mu, bu, bi, P, Q, losses, bad_epoch = _train(
            ucodes.astype(np.int64),
            icodes.astype(np.int64),
            ratings.astype(np.float64),
            len(self.users),
            len(self.items),
            cfg.latent_dim,
            float(cfg.learning_rate),
            float(flr),
            float(cfg.regularization),
            cfg.epochs,
            float(cfg.init_scale),
            rng.state,
        )
        if bad_epoch >= 0:
            self.ops.sgd_updates += bad_epoch * len(ratings)
            raise TrainingDivergedError(int(bad_epoch), float(losses[-1]))
        self.ops.sgd_updates += cfg.epochs * len(ratings)
        self.mu, self.user_bias, self.item_bias = mu, bu, bi
        self.user_factors, self.item_factors = P, Q
        self.losses = losses
        self.fallback = fit_fallback(self, icodes, ratings)

    def _predict_codes(self, ucodes, uknown, icodes, iknown) -> np.ndarray:
        out = self.fallback._predict_codes(ucodes, uknown, icodes, iknown)
        warm = uknown & iknown
        u, i = ucodes[warm], icodes[warm]
        out[warm] = (
            self.mu
            + self.user_bias[u]
            + self.item_bias[i]
            + np.einsum("nf,nf->n", self.user_factors[u], self.item_factors[i])
        )
        return out

    def dump(self, path: str | Path) -> None:
        dim = self.config.latent_dim
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "id", "bias", *(f"f{k}" for k in range(dim))])
            w.writerow(["global", "", repr(self.mu), *([""] * dim)])
            for kind, index, bias, factors in (
                ("user", self.users, self.user_bias, self.user_factors),
                ("item", self.items, self.item_bias, self.item_factors),
            ):
                for j, xid in enumerate(index.ids.tolist()):
                    w.writerow([kind, xid, repr(float(bias[j])), *map(repr, factors[j].tolist())])
