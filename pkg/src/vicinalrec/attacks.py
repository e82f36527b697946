"""Fake-user generation under a fixed attacker budget, and dataset splicing.

Every attack produces round(fake_fraction * n_users) fake rows. Each row
rates all target items at the scale maximum and at most `filler_count`
camouflage (filler) items, all on the rating grid.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from .data import DataError, DatasetStats, RatingMatrix, dataset_stats
from .models import MatrixFactorization, RecModel, TrainConfig

__all__ = [
    "AttackBudget",
    "FakeUserBlock",
    "PoisonedDataset",
    "default_budget",
    "attack_random",
    "attack_average",
    "attack_pga",
    "attack_tna",
    "attack_mixrand",
    "usermix",
    "poison",
    "save_block",
    "load_block",
    "ATTACK_KINDS",
]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class AttackBudget:
    """Attacker capability: population share, per-row filler allowance,
    promoted items, and the rating ceiling."""

    fake_fraction: float
    filler_count: int
    target_items: tuple[int, ...]
    r_max: float

    def __post_init__(self):
        if not 0 < self.fake_fraction < 1:
            raise ValueError("fake_fraction must be in (0, 1)")
        if self.filler_count < 0:
            raise ValueError("filler_count must be >= 0")
        targets = tuple(int(t) for t in self.target_items)
        if len(set(targets)) != len(targets):
            raise ValueError("target items must be distinct")
        object.__setattr__(self, "target_items", targets)

    def n_fake_users(self, n_users: int) -> int:
        return _round_half_up(self.fake_fraction * n_users)


def default_budget(matrix: RatingMatrix, targets,
                   fake_fraction: float = 0.03,
                   stats: DatasetStats | None = None) -> AttackBudget:
    """Budget at the conventional operating point: ~3% fakes, filler count
    equal to the average number of ratings per user, ceiling at scale max."""
    stats = stats or dataset_stats(matrix)
    return AttackBudget(
        fake_fraction=fake_fraction,
        filler_count=_round_half_up(stats.avg_ratings_per_user),
        target_items=tuple(int(t) for t in targets),
        r_max=matrix.scale.max_rating,
    )


@dataclass(frozen=True)
class FakeUserBlock:
    rows: tuple[dict[int, float], ...]
    attack_kind: str
    seed: int
    budget: AttackBudget
    objective_trace: tuple[float, ...] = ()  # optimizer trace, when the attack has one

    def __post_init__(self):
        targets = set(self.budget.target_items)
        for j, row in enumerate(self.rows):
            for t in self.budget.target_items:
                if row.get(t) != self.budget.r_max:
                    raise ValueError(f"fake row {j} must rate target {t} at r_max")
            fillers = [i for i in row if i not in targets]
            if len(fillers) > self.budget.filler_count:
                raise ValueError(f"fake row {j} exceeds the filler allowance")

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class PoisonedDataset:
    """Spliced matrix plus the bookkeeping fake-index set.

    The index set exists for evaluation only; defense code receives the
    bare `matrix` and never sees it.
    """

    matrix: RatingMatrix
    fake_users: frozenset[int]


def _check_budget(matrix: RatingMatrix, budget: AttackBudget) -> None:
    for t in budget.target_items:
        if not 0 <= t < matrix.n_items:
            raise DataError(f"target item {t} out of range")
    if abs(budget.r_max - matrix.scale.max_rating) > 1e-9:
        raise DataError("budget r_max does not match the matrix scale")
    if matrix.n_items - len(budget.target_items) < budget.filler_count:
        raise DataError("fewer non-target items than filler_count")


def _non_target_items(n_items: int, targets) -> np.ndarray:
    mask = np.ones(n_items, dtype=bool)
    mask[list(targets)] = False
    return np.flatnonzero(mask)


def _target_entries(budget: AttackBudget) -> dict[int, float]:
    return {int(t): float(budget.r_max) for t in budget.target_items}


def attack_random(matrix: RatingMatrix, stats: DatasetStats, budget: AttackBudget,
                  seed: int) -> FakeUserBlock:
    """Fillers drawn uniformly; filler ratings mimic the dataset's overall
    rating distribution (normal at the global mean/std, snapped to grid)."""
    _check_budget(matrix, budget)
    rng = np.random.default_rng(seed)
    pool = _non_target_items(matrix.n_items, budget.target_items)
    rows = []
    for _ in range(budget.n_fake_users(matrix.n_users)):
        fillers = rng.choice(pool, size=budget.filler_count, replace=False)
        values = matrix.scale.round_to_grid(
            rng.normal(stats.global_mean, stats.global_std, size=budget.filler_count))
        row = dict(zip((int(i) for i in fillers), (float(v) for v in values)))
        row.update(_target_entries(budget))
        rows.append(row)
    return FakeUserBlock(rows=tuple(rows), attack_kind="random", seed=seed, budget=budget)


def attack_average(matrix: RatingMatrix, budget: AttackBudget, seed: int) -> FakeUserBlock:
    """Fillers drawn uniformly; filler ratings completely random over the
    admissible rating grid."""
    _check_budget(matrix, budget)
    rng = np.random.default_rng(seed)
    pool = _non_target_items(matrix.n_items, budget.target_items)
    grid = matrix.scale.grid()
    rows = []
    for _ in range(budget.n_fake_users(matrix.n_users)):
        fillers = rng.choice(pool, size=budget.filler_count, replace=False)
        values = rng.choice(grid, size=budget.filler_count)
        row = dict(zip((int(i) for i in fillers), (float(v) for v in values)))
        row.update(_target_entries(budget))
        rows.append(row)
    return FakeUserBlock(rows=tuple(rows), attack_kind="average", seed=seed, budget=budget)


def _top_by_count(counts: np.ndarray, how_many: int, exclude) -> np.ndarray:
    """Indices with the largest counts (ties toward the smaller index),
    skipping `exclude`."""
    order = np.lexsort((np.arange(counts.size), -counts))
    excluded = set(int(x) for x in exclude)
    picked = [int(i) for i in order if int(i) not in excluded]
    return np.asarray(picked[:how_many], dtype=np.int64)


def attack_pga(matrix: RatingMatrix, surrogate: RecModel, budget: AttackBudget,
               seed: int, pga_steps: int = 5, pga_lr: float = 1.0,
               refresh_epochs: int = 20) -> FakeUserBlock:
    """Gradient-shaped fillers on the most-rated items.

    Filler ratings start at the (grid-rounded) global mean and take
    `pga_steps` ascent steps on the mean predicted target score over real
    users, estimated through the factorization surrogate: the fake user's
    factor responds to its ratings in closed form (ridge fit against the
    surrogate's item factors) and each target's factor takes one implicit
    update from the fake rows. Between steps the surrogate is retrained on
    the candidate block to score the trace; the best-scoring candidate is
    kept and snapped to the rating grid.
    """
    _check_budget(matrix, budget)
    if surrogate.kind != "mf":
        raise ValueError("surrogate must be a matrix-factorization model")
    if not surrogate._params or surrogate.n_items != matrix.n_items:
        raise ValueError("surrogate untrained or trained on a different item universe")
    if pga_steps < 0:
        raise ValueError("pga_steps must be >= 0")

    stats = dataset_stats(matrix)
    scale = matrix.scale
    n_fake = budget.n_fake_users(matrix.n_users)
    fillers = _top_by_count(matrix.item_counts(), budget.filler_count, budget.target_items)
    targets = np.asarray(budget.target_items, dtype=np.int64)
    init_value = float(scale.round_to_grid([stats.global_mean])[0])

    def build_rows(values: np.ndarray) -> tuple[dict[int, float], ...]:
        rows = []
        for f in range(n_fake):
            row = {int(i): float(v) for i, v in zip(fillers, values[f])}
            row.update(_target_entries(budget))
            rows.append(row)
        return tuple(rows)

    def objective(values: np.ndarray) -> float:
        """Mean predicted target score over real users after retraining the
        surrogate on the spliced candidate."""
        rows = build_rows(values)
        spliced = matrix.append_user_rows([dict(r) for r in rows])
        cfg = surrogate.config
        probe = MatrixFactorization(TrainConfig(
            embedding_dim=cfg.embedding_dim, learning_rate=cfg.learning_rate,
            epochs=refresh_epochs, reg_lambda=cfg.reg_lambda, seed=cfg.seed,
            batch_mode="full")).train(spliced)
        Q = probe._params["Q"]
        P_real = probe._params["P"][:matrix.n_users]
        return float((P_real @ Q[targets].T).mean())

    if pga_steps == 0:
        values = np.full((n_fake, budget.filler_count), init_value)
        return FakeUserBlock(rows=build_rows(values), attack_kind="pga",
                             seed=seed, budget=budget,
                             objective_trace=(objective(values),))

    P = surrogate._params["P"][:matrix.n_users]
    Q = surrogate._params["Q"]
    lam = surrogate.config.reg_lambda
    eta_item = surrogate.config.learning_rate
    p_bar = P.mean(axis=0)
    item_cols = np.concatenate([fillers, targets])
    Qs = Q[item_cols]
    A = Qs.T @ Qs + max(lam, 1e-8) * np.eye(Q.shape[1])
    A_inv_Qf = np.linalg.solve(A, Q[fillers].T)  # (e, filler_count)

    values = np.full((n_fake, budget.filler_count), init_value)
    trace = [objective(values)]
    best_values, best_obj = values.copy(), trace[0]
    target_vec = np.full(targets.size, budget.r_max)
    for _ in range(pga_steps):
        grad = np.zeros_like(values)
        for f in range(n_fake):
            r_f = np.concatenate([values[f], target_vec])
            p_f = np.linalg.solve(A, Qs.T @ r_f)
            # dJ/dp_f through one implicit update of each target factor
            dJ_dpf = np.zeros_like(p_f)
            for t in targets:
                resid = budget.r_max - Q[t] @ p_f
                dJ_dpf += 2.0 * eta_item * (resid * p_bar - (p_bar @ p_f) * Q[t])
            grad[f] = dJ_dpf @ A_inv_Qf
        values = np.clip(values + pga_lr * grad, scale.min_rating, scale.max_rating)
        trace.append(objective(values))
        if trace[-1] > best_obj:
            best_obj, best_values = trace[-1], values.copy()

    final = scale.round_to_grid(best_values)
    return FakeUserBlock(rows=build_rows(final), attack_kind="pga",
                         seed=seed, budget=budget, objective_trace=tuple(trace))


def attack_tna(matrix: RatingMatrix, budget: AttackBudget, seed: int,
               n_influential: int = 10) -> FakeUserBlock:
    """Copies the profiles of the most influential users (largest rating
    counts), truncated to each profile's highest-rated non-target items,
    with targets overwritten at r_max."""
    _check_budget(matrix, budget)
    if n_influential < 1:
        raise ValueError("n_influential must be >= 1")
    counts = matrix.user_counts()
    influential = _top_by_count(counts, min(n_influential, matrix.n_users), ())
    targets = set(budget.target_items)
    rows = []
    for j in range(budget.n_fake_users(matrix.n_users)):
        src = int(influential[j % influential.size])
        items, ratings = matrix.user_row(src)
        keep = [(int(i), float(r)) for i, r in zip(items, ratings) if int(i) not in targets]
        keep.sort(key=lambda ir: (-ir[1], ir[0]))
        row = dict(keep[:budget.filler_count])
        row.update(_target_entries(budget))
        rows.append(row)
    return FakeUserBlock(rows=tuple(rows), attack_kind="tna", seed=seed, budget=budget)


def usermix(r_a: dict[int, float], r_b: dict[int, float], lam: float,
            scale) -> dict[int, float]:
    """Linear interpolation of two sparse rating rows.

    Computed over the union of supports with missing entries as 0;
    results below the scale minimum are dropped, the rest snapped to the
    rating grid.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must be in [0, 1]")
    out: dict[int, float] = {}
    for i in set(r_a) | set(r_b):
        raw = lam * r_a.get(i, 0.0) + (1.0 - lam) * r_b.get(i, 0.0)
        if raw < scale.min_rating:
            continue
        out[int(i)] = float(scale.round_to_grid([raw])[0])
    return out


def attack_mixrand(matrix: RatingMatrix, budget: AttackBudget, seed: int) -> FakeUserBlock:
    """Each fake row interpolates two random real users' rows, keeps the
    highest-rated fillers, and overwrites targets at r_max."""
    _check_budget(matrix, budget)
    if matrix.n_users < 2:
        raise DataError("mixrand needs at least two real users")
    rng = np.random.default_rng(seed)
    targets = set(budget.target_items)
    rows = []
    for _ in range(budget.n_fake_users(matrix.n_users)):
        a, b = rng.choice(matrix.n_users, size=2, replace=False)
        items_a, ratings_a = matrix.user_row(int(a))
        items_b, ratings_b = matrix.user_row(int(b))
        lam = float(rng.uniform())
        mixed = usermix(dict(zip((int(i) for i in items_a), ratings_a)),
                        dict(zip((int(i) for i in items_b), ratings_b)),
                        lam, matrix.scale)
        keep = [(i, r) for i, r in mixed.items() if i not in targets]
        keep.sort(key=lambda ir: (-ir[1], ir[0]))
        row = dict(keep[:budget.filler_count])
        row.update(_target_entries(budget))
        rows.append(row)
    return FakeUserBlock(rows=tuple(rows), attack_kind="mixrand", seed=seed, budget=budget)


def poison(matrix: RatingMatrix, block: FakeUserBlock) -> PoisonedDataset:
    """Splice the fake rows into the dataset as the highest user indices."""
    for j, row in enumerate(block.rows):
        for i in row:
            if not 0 <= i < matrix.n_items:
                raise DataError(f"fake row {j} rates out-of-range item {i}")
    spliced = matrix.append_user_rows([dict(r) for r in block.rows])
    fake = frozenset(range(matrix.n_users, matrix.n_users + len(block.rows)))
    return PoisonedDataset(matrix=spliced, fake_users=fake)


def save_block(block: FakeUserBlock, csv_path, sidecar_path=None) -> None:
    """CSV rows `fake_row,item,rating` plus a JSON provenance sidecar."""
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fake_row", "item", "rating"])
        for j, row in enumerate(block.rows):
            for i in sorted(row):
                w.writerow([j, i, repr(row[i])])
    sidecar_path = sidecar_path or str(csv_path) + ".provenance.json"
    budget = asdict(block.budget)
    budget["target_items"] = list(block.budget.target_items)
    with open(sidecar_path, "w") as fh:
        json.dump({"attack_kind": block.attack_kind, "seed": block.seed,
                   "budget": budget}, fh, indent=2, sort_keys=True)


def load_block(csv_path, sidecar_path=None) -> FakeUserBlock:
    sidecar_path = sidecar_path or str(csv_path) + ".provenance.json"
    with open(sidecar_path) as fh:
        meta = json.load(fh)
    budget = AttackBudget(fake_fraction=meta["budget"]["fake_fraction"],
                          filler_count=meta["budget"]["filler_count"],
                          target_items=tuple(meta["budget"]["target_items"]),
                          r_max=meta["budget"]["r_max"])
    rows: dict[int, dict[int, float]] = {}
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.setdefault(int(rec["fake_row"]), {})[int(rec["item"])] = float(rec["rating"])
    ordered = tuple(rows[j] for j in sorted(rows))
    return FakeUserBlock(rows=ordered, attack_kind=meta["attack_kind"],
                         seed=meta["seed"], budget=budget)


ATTACK_KINDS = ("random", "average", "pga", "tna", "mixrand")
