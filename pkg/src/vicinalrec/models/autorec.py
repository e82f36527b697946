"""User-oriented single-hidden-layer autoencoder over rating rows.

    h(y) = sigmoid(y V + b1)        (the user embedding)
    out(y) = h(y) W2 + b2
Reconstruction loss is taken on observed entries only; weight matrices
carry the global regularizer, biases do not.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..data import RatingMatrix
from .base import RecModel


class AutoRec(RecModel):
    kind = "autorec"

    def _init_params(self, rng: np.random.Generator) -> None:
        e = self.config.embedding_dim
        self._params = {
            "V": rng.uniform(-0.01, 0.01, size=(self.n_items, e)),
            "b1": rng.uniform(-0.01, 0.01, size=e),
            "W2": rng.uniform(-0.01, 0.01, size=(e, self.n_items)),
            "b2": rng.uniform(-0.01, 0.01, size=self.n_items),
        }

    def _forward_rows(self, rows_dense: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = expit(rows_dense @ self._params["V"] + self._params["b1"])
        return h, h @ self._params["W2"] + self._params["b2"]

    def loss(self, data: RatingMatrix) -> float:
        rows = np.flatnonzero(data.user_counts() > 0)
        yd = data.csr[rows].toarray()
        mask = yd != 0
        _, out = self._forward_rows(yd)
        resid = np.where(mask, yd - out, 0.0)
        lam = self.config.reg_lambda
        V, W2 = self._params["V"], self._params["W2"]
        return float((resid * resid).sum() + lam * ((V * V).sum() + (W2 * W2).sum()))

    def _grads(self, data: RatingMatrix) -> dict[str, np.ndarray]:
        rows = np.flatnonzero(data.user_counts() > 0)
        yd = data.csr[rows].toarray()
        mask = yd != 0
        h, out = self._forward_rows(yd)
        neg2e = -2.0 * np.where(mask, yd - out, 0.0)
        lam = self.config.reg_lambda
        g_pre = (neg2e @ self._params["W2"].T) * h * (1.0 - h)
        return {
            "V": yd.T @ g_pre + 2.0 * lam * self._params["V"],
            "b1": g_pre.sum(axis=0),
            "W2": h.T @ neg2e + 2.0 * lam * self._params["W2"],
            "b2": neg2e.sum(axis=0),
        }

    def _pass(self, subset: RatingMatrix, lr: float, order_rng: np.random.Generator) -> None:
        if self.config.batch_mode == "full":
            grads = self._grads(subset)
            for name in self._params:
                self._params[name] -= lr * grads[name]
            return
        # stochastic pass, one user row at a time; regularizer hits the
        # touched V rows / W2 columns
        V, b1, W2, b2 = (self._params[k] for k in ("V", "b1", "W2", "b2"))
        lam = self.config.reg_lambda
        users = np.flatnonzero(subset.user_counts() > 0)
        for u in order_rng.permutation(users):
            items, ratings = subset.user_row(u)
            pre = V[items].T @ ratings + b1
            h = expit(pre)
            out = h @ W2[:, items] + b2[items]
            neg2e = -2.0 * (ratings - out)
            g_pre = (W2[:, items] @ neg2e) * h * (1.0 - h)
            V[items] -= lr * (np.outer(ratings, g_pre) + 2.0 * lam * V[items])
            b1 -= lr * g_pre
            W2[:, items] -= lr * (np.outer(h, neg2e) + 2.0 * lam * W2[:, items])
            b2[items] -= lr * neg2e

    def user_embedding(self, u: int) -> np.ndarray:
        self._check_user(u)
        items, ratings = self._require_data().user_row(u)
        pre = self._params["V"][items].T @ ratings + self._params["b1"]
        return expit(pre)

    def all_user_embeddings(self) -> np.ndarray:
        data = self._require_data()
        return expit(data.csr @ self._params["V"] + self._params["b1"])

    def predict_scores(self, u: int) -> np.ndarray:
        h = self.user_embedding(u)
        return h @ self._params["W2"] + self._params["b2"]
