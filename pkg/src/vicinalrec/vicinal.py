"""Per-user vicinal defense at serve time.

Before answering a recommendation request for user u, the model is
fine-tuned on the rating rows of u's k nearest neighbors in embedding
space, the scores are produced, and the parameters are restored exactly.
Neighbor lists can be cached and refreshed periodically.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .data import RatingMatrix
from .metrics import RecommendationSet, top_k_from_scores
from .models import RecModel

__all__ = [
    "VicinalConfig",
    "NeighborCache",
    "CacheFingerprintError",
    "TimingRecord",
    "DefendedResult",
    "embedding_distance",
    "k_nearest",
    "build_neighbor_cache",
    "lookup",
    "serve_defended",
    "serve_all_defended",
    "DefendedServer",
    "ModelServer",
    "write_timing_csv",
]


class CacheFingerprintError(RuntimeError):
    """Neighbor cache was built under a different configuration."""


@dataclass(frozen=True)
class VicinalConfig:
    """Defense parameters: neighborhood size, fine-tune schedule, caching."""

    k: int = 12
    fine_tune_steps: int = 20
    fine_tune_lr: float | None = None  # None: the model's training rate
    cache_refresh_period: int = 0      # serve calls between rebuilds; 0 = no cache

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.fine_tune_steps < 0:
            raise ValueError("fine_tune_steps must be >= 0")
        if self.cache_refresh_period < 0:
            raise ValueError("cache_refresh_period must be >= 0")


@dataclass
class NeighborCache:
    """Per-user neighbor lists, valid for a bounded number of serve calls."""

    neighbors: np.ndarray  # (n_users, k) int64
    k: int
    refresh_period: int
    build_stamp: int = 0
    serves_since_build: int = 0

    def record_serve(self) -> None:
        self.serves_since_build += 1

    def is_stale(self) -> bool:
        return self.refresh_period > 0 and self.serves_since_build >= self.refresh_period


@dataclass(frozen=True)
class TimingRecord:
    user: int
    search_ms: float
    finetune_ms: float
    predict_ms: float
    total_ms: float


@dataclass(frozen=True)
class DefendedResult:
    top_items: tuple[int, ...]
    scores: np.ndarray
    timing: TimingRecord


def embedding_distance(z_i: np.ndarray, z_u: np.ndarray) -> float:
    """Euclidean distance between two user embeddings."""
    z_i = np.asarray(z_i, dtype=np.float64)
    z_u = np.asarray(z_u, dtype=np.float64)
    if z_i.shape != z_u.shape:
        raise ValueError(f"embedding length mismatch: {z_i.shape} vs {z_u.shape}")
    return float(np.linalg.norm(z_i - z_u))


def k_nearest(u: int, embeddings: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k users closest to u, distance-ascending.

    Ties break toward the smaller index; u itself has distance 0 and is
    always included for k >= 1.
    """
    n = embeddings.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range [1, {n}]")
    if not 0 <= u < n:
        raise IndexError(f"user index {u} out of range")
    d = np.linalg.norm(embeddings - embeddings[u], axis=1)
    order = np.lexsort((np.arange(n), d))
    return order[:k].astype(np.int64)


def build_neighbor_cache(model: RecModel, data: RatingMatrix, cfg: VicinalConfig,
                         embeddings: np.ndarray | None = None,
                         build_stamp: int = 0) -> NeighborCache:
    """Neighbor lists for every user from the model's current embeddings."""
    if embeddings is None:
        embeddings = model.all_user_embeddings()
    n = embeddings.shape[0]
    lists = np.empty((n, cfg.k), dtype=np.int64)
    for u in range(n):
        lists[u] = k_nearest(u, embeddings, cfg.k)
    return NeighborCache(neighbors=lists, k=cfg.k,
                         refresh_period=cfg.cache_refresh_period,
                         build_stamp=build_stamp)


def lookup(cache: NeighborCache, u: int, k: int | None = None) -> np.ndarray | None:
    """Cached neighbor list for u, or None when the cache is stale."""
    if k is not None and k != cache.k:
        raise CacheFingerprintError(f"cache built with k={cache.k}, queried with k={k}")
    if cache.is_stale():
        return None
    return cache.neighbors[u]


def serve_defended(model: RecModel, data: RatingMatrix, u: int, cfg: VicinalConfig,
                   K: int, embeddings: np.ndarray | None = None,
                   cache: NeighborCache | None = None) -> DefendedResult:
    """Defended recommendation for one user.

    snapshot -> neighbor search -> fine-tune on the neighbors' rows ->
    predict -> top-K over non-interacted items -> exact restore. The
    parameters after the call are bit-identical to the snapshot even on
    error paths.
    """
    t_start = time.perf_counter()
    snap = model.snapshot()
    try:
        t0 = time.perf_counter()
        neighbors = None
        if cache is not None:
            neighbors = lookup(cache, u, cfg.k)
        if neighbors is None:
            if embeddings is None:
                embeddings = model.all_user_embeddings()
            neighbors = k_nearest(u, embeddings, cfg.k)
        t_search = time.perf_counter()

        if cfg.fine_tune_steps > 0:
            subset = data.rows_subset(neighbors)
            if subset.n_entries > 0:
                model.fine_tune(subset, cfg.fine_tune_steps, cfg.fine_tune_lr)
        t_tune = time.perf_counter()

        scores = model.predict_scores(u)
        interacted, _ = data.user_row(u)
        top = top_k_from_scores(scores, interacted, K)
        t_predict = time.perf_counter()
    finally:
        model.restore(snap)
    if cache is not None:
        cache.record_serve()
    return DefendedResult(
        top_items=tuple(top),
        scores=scores,
        timing=TimingRecord(
            user=u,
            search_ms=(t_search - t0) * 1e3,
            finetune_ms=(t_tune - t_search) * 1e3,
            predict_ms=(t_predict - t_tune) * 1e3,
            total_ms=(time.perf_counter() - t_start) * 1e3,
        ),
    )


def serve_all_defended(model: RecModel, data: RatingMatrix, cfg: VicinalConfig,
                       K: int) -> tuple[RecommendationSet, list[TimingRecord]]:
    """Defended recommendations for every user in `data`.

    Embeddings are frozen from the model's current (post-training)
    parameters for the whole sweep; the model is bit-identical before
    and after.
    """
    embeddings = model.all_user_embeddings()
    cache = None
    stamp = 0
    if cfg.cache_refresh_period > 0:
        cache = build_neighbor_cache(model, data, cfg, embeddings, build_stamp=stamp)
    lists: dict[int, tuple[int, ...]] = {}
    timings: list[TimingRecord] = []
    for u in range(data.n_users):
        if cache is not None and cache.is_stale():
            stamp += 1
            cache = build_neighbor_cache(model, data, cfg, embeddings, build_stamp=stamp)
        result = serve_defended(model, data, u, cfg, K, embeddings=embeddings, cache=cache)
        lists[u] = result.top_items
        timings.append(result.timing)
    return RecommendationSet(lists=lists, K=K), timings


class DefendedServer:
    """Adapter exposing defended serving to the evaluation layer."""

    def __init__(self, model: RecModel, data: RatingMatrix, cfg: VicinalConfig):
        self.model = model
        self.data = data
        self.cfg = cfg

    def recommend_all(self, K: int) -> tuple[RecommendationSet, list[TimingRecord]]:
        return serve_all_defended(self.model, self.data, self.cfg, K)


class ModelServer:
    """Undefended serving: plain model predictions, no fine-tuning."""

    def __init__(self, model: RecModel, data: RatingMatrix):
        self.model = model
        self.data = data

    def recommend_all(self, K: int) -> tuple[RecommendationSet, list[TimingRecord]]:
        lists: dict[int, tuple[int, ...]] = {}
        timings: list[TimingRecord] = []
        for u in range(self.data.n_users):
            t0 = time.perf_counter()
            scores = self.model.predict_scores(u)
            interacted, _ = self.data.user_row(u)
            lists[u] = tuple(top_k_from_scores(scores, interacted, K))
            dt = (time.perf_counter() - t0) * 1e3
            timings.append(TimingRecord(user=u, search_ms=0.0, finetune_ms=0.0,
                                        predict_ms=dt, total_ms=dt))
        return RecommendationSet(lists=lists, K=K), timings


def write_timing_csv(records: list[TimingRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "search_ms", "finetune_ms", "predict_ms", "total_ms"])
        for r in records:
            w.writerow([r.user, f"{r.search_ms:.4f}", f"{r.finetune_ms:.4f}",
                        f"{r.predict_ms:.4f}", f"{r.total_ms:.4f}"])
