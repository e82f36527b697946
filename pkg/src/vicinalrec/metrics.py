"""Evaluation: leave-one-out accuracy, per-target and averaged hit ratio,
timing aggregation, and report serialization."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .data import RatingMatrix, SplitDataset

__all__ = [
    "RecommendationSet",
    "TimingSummary",
    "EvalReport",
    "top_k_from_scores",
    "accuracy",
    "hit_ratio",
    "evaluate",
    "write_metrics_csv",
]


@dataclass(frozen=True)
class RecommendationSet:
    """Ordered top-K lists per user, drawn from non-interacted items."""

    lists: dict[int, tuple[int, ...]]
    K: int


@dataclass(frozen=True)
class TimingSummary:
    mean_ms: float
    median_ms: float
    max_ms: float


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    hr_per_target: dict[int, float]
    hr_mean: float
    n_eval_users: int
    timing: TimingSummary | None = None

    def to_json_dict(self) -> dict:
        out = {
            "schema": "vicinalrec-eval/1",
            "accuracy": self.accuracy,
            "hr_per_target": {str(t): v for t, v in sorted(self.hr_per_target.items())},
            "hr_mean": self.hr_mean,
            "n_eval_users": self.n_eval_users,
        }
        if self.timing is not None:
            out["timing_ms"] = {"mean": self.timing.mean_ms,
                                "median": self.timing.median_ms,
                                "max": self.timing.max_ms}
        return out


def top_k_from_scores(scores: np.ndarray, interacted, K: int) -> list[int]:
    """K highest-scoring items outside `interacted`; ties take the lower
    item index. Returns all candidates when fewer than K exist."""
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.ones(scores.shape[0], dtype=bool)
    interacted = np.asarray(list(interacted) if isinstance(interacted, (set, frozenset)) else interacted,
                            dtype=np.int64)
    if interacted.size:
        mask[interacted] = False
    cand = np.flatnonzero(mask)
    order = np.lexsort((cand, -scores[cand]))
    return [int(i) for i in cand[order[:K]]]


def accuracy(recs: RecommendationSet, split: SplitDataset,
             fake_users=frozenset(), threshold: float | None = None) -> float:
    """Fraction of evaluated users whose held-out item was recommended.

    Evaluated users are the real users present in `split.test`, optionally
    restricted to those whose held-out rating is >= `threshold`.
    """
    hits = 0
    total = 0
    for u, (item, rating) in split.test.items():
        if u in fake_users:
            continue
        if threshold is not None and rating < threshold:
            continue
        if u not in recs.lists:
            raise KeyError(f"no recommendation list for test user {u}")
        total += 1
        if item in recs.lists[u]:
            hits += 1
    return hits / total if total else 0.0


def hit_ratio(recs: RecommendationSet, target: int, interactions: RatingMatrix,
              fake_users=frozenset()) -> float:
    """Share of eligible real users whose top-K contains `target`.

    Eligible means no recorded interaction with the target. Returns 0
    when no user is eligible.
    """
    if not 0 <= target < interactions.n_items:
        raise IndexError(f"target item {target} out of range")
    col = interactions.csr.getcol(target)
    has_interaction = np.zeros(interactions.n_users, dtype=bool)
    has_interaction[col.nonzero()[0]] = True
    hits = 0
    total = 0
    for u in range(interactions.n_users):
        if u in fake_users or has_interaction[u]:
            continue
        total += 1
        if u in recs.lists and target in recs.lists[u]:
            hits += 1
    return hits / total if total else 0.0


def evaluate(server, split: SplitDataset, targets, K: int,
             fake_users=frozenset(), threshold: float | None = None) -> EvalReport:
    """Build one RecommendationSet from `server` and score it.

    `server` exposes `recommend_all(K) -> (RecommendationSet, timings)`
    and serves from the matrix in `server.data`. Fake users are excluded
    from both metric populations.
    """
    recs, timings = server.recommend_all(K)
    acc = accuracy(recs, split, fake_users=fake_users, threshold=threshold)
    hr = {int(t): hit_ratio(recs, int(t), server.data, fake_users=fake_users)
          for t in targets}
    timing = None
    if timings:
        totals = np.array([t.total_ms for t in timings])
        timing = TimingSummary(mean_ms=float(totals.mean()),
                               median_ms=float(np.median(totals)),
                               max_ms=float(totals.max()))
    n_eval = sum(1 for u in split.test if u not in fake_users)
    return EvalReport(accuracy=acc, hr_per_target=hr,
                      hr_mean=float(np.mean(list(hr.values()))) if hr else 0.0,
                      n_eval_users=n_eval, timing=timing)


def write_metrics_csv(report: EvalReport, path) -> None:
    """Flat `metric,target,value` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "target", "value"])
        w.writerow(["accuracy", "", repr(report.accuracy)])
        for t, v in sorted(report.hr_per_target.items()):
            w.writerow(["hit_ratio", t, repr(v)])
        w.writerow(["hr_mean", "", repr(report.hr_mean)])
        if report.timing is not None:
            w.writerow(["timing_mean_ms", "", repr(report.timing.mean_ms)])
            w.writerow(["timing_median_ms", "", repr(report.timing.median_ms)])
            w.writerow(["timing_max_ms", "", repr(report.timing.max_ms)])


def report_to_json(report: EvalReport) -> str:
    return json.dumps(report.to_json_dict(), indent=2, sort_keys=True)
