"""Biasless matrix factorization with squared loss.

Objective on a dataset D:
    sum_{(u,i) in D} (r_ui - q_i . p_u)^2 + reg_lambda * (||P||^2 + ||Q||^2)
The regularizer covers every factor, so parameters unsupported by the
current training subset decay during fine-tuning.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..data import RatingMatrix
from .base import RecModel


def _residual_csr(data: RatingMatrix, resid: np.ndarray) -> sp.csr_matrix:
    # entry_arrays() is row-major canonical, so resid aligns with csr.data
    m = data.csr.copy()
    m.data = resid
    return m


class MatrixFactorization(RecModel):
    kind = "mf"

    def _init_params(self, rng: np.random.Generator) -> None:
        e = self.config.embedding_dim
        self._params = {
            "P": rng.uniform(-0.01, 0.01, size=(self.n_users, e)),
            "Q": rng.uniform(-0.01, 0.01, size=(self.n_items, e)),
        }

    def _predicted(self, uu: np.ndarray, ii: np.ndarray) -> np.ndarray:
        P, Q = self._params["P"], self._params["Q"]
        return np.einsum("ij,ij->i", P[uu], Q[ii])

    def loss(self, data: RatingMatrix) -> float:
        uu, ii, rr = data.entry_arrays()
        resid = rr - self._predicted(uu, ii)
        lam = self.config.reg_lambda
        P, Q = self._params["P"], self._params["Q"]
        return float(resid @ resid + lam * ((P * P).sum() + (Q * Q).sum()))

    def _grads(self, data: RatingMatrix) -> dict[str, np.ndarray]:
        uu, ii, rr = data.entry_arrays()
        resid = rr - self._predicted(uu, ii)
        R = _residual_csr(data, resid)
        lam = self.config.reg_lambda
        P, Q = self._params["P"], self._params["Q"]
        return {
            "P": -2.0 * (R @ Q) + 2.0 * lam * P,
            "Q": -2.0 * (R.T @ P) + 2.0 * lam * Q,
        }

    def _pass(self, subset: RatingMatrix, lr: float, order_rng: np.random.Generator) -> None:
        if self.config.batch_mode == "full":
            grads = self._grads(subset)
            self._params["P"] -= lr * grads["P"]
            self._params["Q"] -= lr * grads["Q"]
            return
        # per-entry SGD with the regularizer applied per touched row
        uu, ii, rr = subset.entry_arrays()
        order = order_rng.permutation(uu.size)
        P, Q = self._params["P"], self._params["Q"]
        lam = self.config.reg_lambda
        for idx in order:
            u, i, r = uu[idx], ii[idx], rr[idx]
            pu = P[u].copy()
            qi = Q[i]
            err = r - pu @ qi
            P[u] += lr * (2.0 * err * qi - 2.0 * lam * pu)
            Q[i] += lr * (2.0 * err * pu - 2.0 * lam * qi)

    def user_embedding(self, u: int) -> np.ndarray:
        self._check_user(u)
        return self._params["P"][u].copy()

    def all_user_embeddings(self) -> np.ndarray:
        return self._params["P"].copy()

    def predict_scores(self, u: int) -> np.ndarray:
        self._check_user(u)
        return self._params["Q"] @ self._params["P"][u]
