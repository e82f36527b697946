"""NSVD-style factorization: the user factor is an aggregate of profile
factors over the user's rated items, so users are represented purely by
their item history.

    p_u = |R_u|^{-1/2} * sum_{i in R_u} w_i          (zero vector if R_u empty)
    score(u, i) = q_i . p_u
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..data import RatingMatrix
from .base import RecModel
from .mf import _residual_csr


def _row_normalizer(data: RatingMatrix) -> sp.csr_matrix:
    """Sparse (n_users x n_items) matrix with 1/sqrt(|R_u|) at rated cells."""
    counts = data.user_counts().astype(np.float64)
    inv = np.zeros_like(counts)
    nz = counts > 0
    inv[nz] = 1.0 / np.sqrt(counts[nz])
    m = data.csr.copy()
    m.data = np.repeat(inv, np.diff(data.csr.indptr))
    return m


class Nsvd(RecModel):
    kind = "nsvd"

    def _init_params(self, rng: np.random.Generator) -> None:
        e = self.config.embedding_dim
        self._params = {
            "W": rng.uniform(-0.01, 0.01, size=(self.n_items, e)),
            "Q": rng.uniform(-0.01, 0.01, size=(self.n_items, e)),
        }

    def _user_factors(self, data: RatingMatrix) -> np.ndarray:
        return _row_normalizer(data) @ self._params["W"]

    def loss(self, data: RatingMatrix) -> float:
        uu, ii, rr = data.entry_arrays()
        P = self._user_factors(data)
        resid = rr - np.einsum("ij,ij->i", P[uu], self._params["Q"][ii])
        lam = self.config.reg_lambda
        W, Q = self._params["W"], self._params["Q"]
        return float(resid @ resid + lam * ((W * W).sum() + (Q * Q).sum()))

    def _grads(self, data: RatingMatrix) -> dict[str, np.ndarray]:
        S = _row_normalizer(data)
        W, Q = self._params["W"], self._params["Q"]
        P = S @ W
        uu, ii, rr = data.entry_arrays()
        resid = rr - np.einsum("ij,ij->i", P[uu], Q[ii])
        R = _residual_csr(data, resid)
        lam = self.config.reg_lambda
        grad_P = -2.0 * (R @ Q)
        return {
            "W": S.T @ grad_P + 2.0 * lam * W,
            "Q": -2.0 * (R.T @ P) + 2.0 * lam * Q,
        }

    def _pass(self, subset: RatingMatrix, lr: float, order_rng: np.random.Generator) -> None:
        if self.config.batch_mode == "full":
            grads = self._grads(subset)
            self._params["W"] -= lr * grads["W"]
            self._params["Q"] -= lr * grads["Q"]
            return
        # stochastic pass, one user row at a time
        W, Q = self._params["W"], self._params["Q"]
        lam = self.config.reg_lambda
        users = np.flatnonzero(subset.user_counts() > 0)
        for u in order_rng.permutation(users):
            items, ratings = subset.user_row(u)
            scale = 1.0 / np.sqrt(items.size)
            p = scale * W[items].sum(axis=0)
            err = ratings - Q[items] @ p
            grad_p = -2.0 * (err[:, None] * Q[items]).sum(axis=0)
            Q[items] += lr * (2.0 * err[:, None] * p - 2.0 * lam * Q[items])
            W[items] -= lr * (scale * grad_p + 2.0 * lam * W[items])

    def user_embedding(self, u: int) -> np.ndarray:
        self._check_user(u)
        items, _ = self._require_data().user_row(u)
        if items.size == 0:
            return np.zeros(self.config.embedding_dim)
        return self._params["W"][items].sum(axis=0) / np.sqrt(items.size)

    def all_user_embeddings(self) -> np.ndarray:
        return self._user_factors(self._require_data())

    def predict_scores(self, u: int) -> np.ndarray:
        return self._params["Q"] @ self.user_embedding(u)
