"""Robust-training baselines for factorization models, composable with
the vicinal defense: adversarially perturbed pairwise ranking (APR),
least-trimmed-squares factorization (LTSMF), and reconstruction-operator
robust factorization (RMF)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import RatingMatrix
from .metrics import RecommendationSet
from .models import MODEL_KINDS, MatrixFactorization, RecModel, TrainConfig, TrainingDiverged
from .models.mf import _residual_csr
from .vicinal import TimingRecord, VicinalConfig, serve_all_defended

__all__ = [
    "AprConfig",
    "LtsmfConfig",
    "RmfConfig",
    "RmfModel",
    "apr_train",
    "bpr_train",
    "ltsmf_train",
    "ltsmf_trim_indices",
    "rmf_train",
    "compose_with_vicinal",
]


# --------------------------------------------------------------------------
# APR: pairwise ranking with a worst-case embedding perturbation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AprConfig:
    epsilon: float = 0.5
    lambda_adv: float = 1.0
    negatives_per_positive: int = 1

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.lambda_adv < 0:
            raise ValueError("lambda_adv must be >= 0")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")


def _observed_keys(data: RatingMatrix) -> np.ndarray:
    uu, ii, _ = data.entry_arrays()
    return np.sort(uu * np.int64(data.n_items) + ii)


def _sample_triples(data: RatingMatrix, npos: int, rng: np.random.Generator,
                    observed_keys: np.ndarray):
    """(u, i+, j-) with i+ observed and j- unobserved for u."""
    uu, ii, _ = data.entry_arrays()
    uu = np.repeat(uu, npos)
    ii = np.repeat(ii, npos)
    jj = rng.integers(0, data.n_items, size=uu.size)
    for _ in range(64):
        keys = uu * np.int64(data.n_items) + jj
        pos = np.searchsorted(observed_keys, keys)
        pos = np.minimum(pos, observed_keys.size - 1)
        bad = observed_keys[pos] == keys
        if not bad.any():
            break
        jj[bad] = rng.integers(0, data.n_items, size=int(bad.sum()))
    return uu, ii, jj


def _bpr_data_grads(P, Q, uu, ii, jj):
    s = np.einsum("ij,ij->i", P[uu], Q[ii] - Q[jj])
    w = expit(-s)
    gP = np.zeros_like(P)
    gQ = np.zeros_like(Q)
    np.add.at(gP, uu, -w[:, None] * (Q[ii] - Q[jj]))
    np.add.at(gQ, ii, -w[:, None] * P[uu])
    np.add.at(gQ, jj, w[:, None] * P[uu])
    loss = float(-np.log(expit(s)).sum())
    return gP, gQ, loss


def apr_train(data: RatingMatrix, cfg: AprConfig, base: TrainConfig) -> MatrixFactorization:
    """Minimax training: each epoch alternates a pairwise-ranking step with
    a worst-case step taken at parameters shifted by a normalized
    gradient-ascent perturbation of L2 norm epsilon.

    With epsilon = 0 the perturbation is identically zero and the
    trajectory equals plain pairwise-ranking training.
    """
    if data.n_entries == 0:
        raise ValueError("cannot train on an empty matrix")
    model = MatrixFactorization(base)
    model.n_users, model.n_items = data.n_users, data.n_items
    model.scale = data.scale
    model.data = data
    model._init_params(np.random.default_rng(base.seed))
    P, Q = model._params["P"], model._params["Q"]
    lam_reg = base.reg_lambda
    model.loss_history = []
    model.perturbation_norms = []
    observed_keys = _observed_keys(data)

    for epoch in range(base.epochs):
        rng = np.random.default_rng([base.seed, 7, epoch])
        uu, ii, jj = _sample_triples(data, cfg.negatives_per_positive, rng, observed_keys)
        gP, gQ, loss = _bpr_data_grads(P, Q, uu, ii, jj)
        if cfg.epsilon > 0:
            norm = float(np.sqrt((gP * gP).sum() + (gQ * gQ).sum()))
            if norm > 0:
                dP, dQ = cfg.epsilon * gP / norm, cfg.epsilon * gQ / norm
                model.perturbation_norms.append(
                    float(np.sqrt((dP * dP).sum() + (dQ * dQ).sum())))
                if cfg.lambda_adv > 0:
                    aP, aQ, _ = _bpr_data_grads(P + dP, Q + dQ, uu, ii, jj)
                    gP = gP + cfg.lambda_adv * aP
                    gQ = gQ + cfg.lambda_adv * aQ
        gP += 2.0 * lam_reg * P
        gQ += 2.0 * lam_reg * Q
        P -= base.learning_rate * gP
        Q -= base.learning_rate * gQ
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(Q))):
            raise TrainingDiverged("apr: parameters diverged")
        model.loss_history.append(loss + lam_reg * float((P * P).sum() + (Q * Q).sum()))
        model._epoch += 1
    return model


def bpr_train(data: RatingMatrix, base: TrainConfig,
              negatives_per_positive: int = 1) -> MatrixFactorization:
    """Plain pairwise-ranking training (APR with a zero-radius game)."""
    return apr_train(data, AprConfig(epsilon=0.0, lambda_adv=0.0,
                                     negatives_per_positive=negatives_per_positive), base)


# --------------------------------------------------------------------------
# LTSMF: least-trimmed-squares factorization
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LtsmfConfig:
    trim_fraction: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.trim_fraction < 1.0:
            raise ValueError("trim_fraction must be in [0, 1)")


def ltsmf_trim_indices(squared_residuals: np.ndarray, trim_fraction: float) -> np.ndarray:
    """Entry positions to exclude: the ceil(alpha*N) largest squared
    residuals, ties resolved toward the lower entry index."""
    n = squared_residuals.size
    n_trim = int(np.ceil(trim_fraction * n))
    if n_trim == 0:
        return np.empty(0, dtype=np.int64)
    order = np.lexsort((np.arange(n), -squared_residuals))
    return np.sort(order[:n_trim])


def ltsmf_train(data: RatingMatrix, cfg: LtsmfConfig, base: TrainConfig) -> MatrixFactorization:
    """Factorization training that drops the worst-fit entries each epoch.

    With trim_fraction = 0 the trajectory is identical to plain full-batch
    factorization training. The entry positions trimmed in the final epoch
    are left on the model as `ltsmf_trimmed_last`.
    """
    model = MatrixFactorization(base)
    model.n_users, model.n_items = data.n_users, data.n_items
    model.scale = data.scale
    model.data = data
    model._init_params(np.random.default_rng(base.seed))
    model.loss_history = []
    uu, ii, rr = data.entry_arrays()
    trimmed = np.empty(0, dtype=np.int64)
    for _ in range(base.epochs):
        if cfg.trim_fraction > 0:
            resid = rr - model._predicted(uu, ii)
            trimmed = ltsmf_trim_indices(resid * resid, cfg.trim_fraction)
            keep = np.ones(rr.size, dtype=bool)
            keep[trimmed] = False
            subset = RatingMatrix.from_entries(uu[keep], ii[keep], rr[keep],
                                               data.n_users, data.n_items, data.scale,
                                               validate=False)
        else:
            subset = data
        grads = model._grads(subset)
        model._params["P"] -= base.learning_rate * grads["P"]
        model._params["Q"] -= base.learning_rate * grads["Q"]
        model._epoch += 1
        value = model.loss(data)
        if not np.isfinite(value):
            raise TrainingDiverged("ltsmf: loss diverged")
        model.loss_history.append(value)
    model.ltsmf_trimmed_last = trimmed
    return model


# --------------------------------------------------------------------------
# RMF: masked low-rank reconstruction  min_U || Y - A(U U^T Y) ||_F^2
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RmfConfig:
    rank: int = 8
    steps: int = 200
    lr: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


class RmfModel(RecModel):
    """User-side projection factor U; scores for u are row u of U U^T Y.

    Fits the recommender contract so it can serve and be fine-tuned like
    any other model; the user embedding is the row of U.
    """

    kind = "rmf"

    def _init_params(self, rng: np.random.Generator) -> None:
        self._params = {"U": rng.uniform(-0.01, 0.01,
                                         size=(self.n_users, self.config.embedding_dim))}

    def loss(self, data: RatingMatrix) -> float:
        U = self._params["U"]
        uu, ii, rr = data.entry_arrays()
        M = (data.csr.T @ U).T  # rank x n_items
        resid = rr - np.einsum("ij,ji->i", U[uu], M[:, ii])
        return float(resid @ resid)

    def _grads(self, data: RatingMatrix) -> dict[str, np.ndarray]:
        U = self._params["U"]
        Y = data.csr
        M = (Y.T @ U).T
        uu, ii, rr = data.entry_arrays()
        resid = rr - np.einsum("ij,ji->i", U[uu], M[:, ii])
        E = _residual_csr(data, resid)
        return {"U": -2.0 * (E @ M.T + Y @ (E.T @ U))}

    def _pass(self, subset: RatingMatrix, lr: float, order_rng: np.random.Generator) -> None:
        self._params["U"] -= lr * self._grads(subset)["U"]

    def user_embedding(self, u: int) -> np.ndarray:
        self._check_user(u)
        return self._params["U"][u].copy()

    def all_user_embeddings(self) -> np.ndarray:
        return self._params["U"].copy()

    def predict_scores(self, u: int) -> np.ndarray:
        self._check_user(u)
        U = self._params["U"]
        w = U @ U[u]
        return self._require_data().csr.T @ w


MODEL_KINDS[RmfModel.kind] = RmfModel


def rmf_train(data: RatingMatrix, cfg: RmfConfig) -> RmfModel:
    if cfg.rank > min(data.n_users, data.n_items):
        raise ValueError("rank exceeds the matrix dimensions")
    base = TrainConfig(embedding_dim=cfg.rank, learning_rate=cfg.lr,
                       epochs=cfg.steps, reg_lambda=0.0, seed=cfg.seed,
                       batch_mode="full")
    model = RmfModel(base)
    return model.train(data)


# --------------------------------------------------------------------------
# Composition with the vicinal defense
# --------------------------------------------------------------------------

def compose_with_vicinal(defended_model: RecModel, data: RatingMatrix,
                         cfg: VicinalConfig, K: int
                         ) -> tuple[RecommendationSet, list[TimingRecord]]:
    """Serve a baseline-trained model through the vicinal defense; no
    special casing, the restore contract carries over."""
    return serve_all_defended(defended_model, data, cfg, K)
