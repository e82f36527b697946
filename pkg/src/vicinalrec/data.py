"""Rating datasets: ingestion, sparse matrices, splits, stats, target selection."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DataError",
    "RatingScale",
    "RatingMatrix",
    "SplitDataset",
    "DatasetStats",
    "ingest_ratings",
    "leave_one_out_split",
    "dataset_stats",
    "select_target_items",
    "make_synthetic_ratings",
]

_GRID_EPS = 1e-9


class DataError(ValueError):
    """Raised for malformed rating files or inconsistent matrix construction."""


@dataclass(frozen=True)
class RatingScale:
    """Bounded rating scale with a fixed step between admissible values."""

    min_rating: float = 1.0
    max_rating: float = 5.0
    granularity: float = 1.0

    def __post_init__(self):
        if not self.min_rating < self.max_rating:
            raise DataError(f"min_rating {self.min_rating} must be < max_rating {self.max_rating}")
        if self.granularity <= 0:
            raise DataError("granularity must be positive")
        span = (self.max_rating - self.min_rating) / self.granularity
        if abs(span - round(span)) > _GRID_EPS:
            raise DataError("scale span must be an integer multiple of granularity")
        # Ratings are stored sparsely with 0 meaning "absent", so the scale
        # must not contain 0.
        if self.min_rating <= 0:
            raise DataError("min_rating must be positive")

    @property
    def n_levels(self) -> int:
        return int(round((self.max_rating - self.min_rating) / self.granularity)) + 1

    def grid(self) -> np.ndarray:
        """All admissible rating values, ascending."""
        return self.min_rating + self.granularity * np.arange(self.n_levels)

    def round_to_grid(self, values) -> np.ndarray:
        """Round to the nearest admissible value (half away from min) and clip."""
        idx = np.floor((np.asarray(values, dtype=np.float64) - self.min_rating) / self.granularity + 0.5)
        idx = np.clip(idx, 0, self.n_levels - 1)
        return self.min_rating + self.granularity * idx

    def on_grid(self, values) -> bool:
        v = np.asarray(values, dtype=np.float64)
        if v.size == 0:
            return True
        if v.min() < self.min_rating - _GRID_EPS or v.max() > self.max_rating + _GRID_EPS:
            return False
        steps = (v - self.min_rating) / self.granularity
        return bool(np.all(np.abs(steps - np.round(steps)) <= 1e-6))


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class RatingMatrix:
    """Sparse user x item rating matrix with dense 0-based indices.

    Immutable after construction; all deriving operations return new
    instances. `raw_user_ids`/`raw_item_ids` keep the original identifiers
    for reporting when the matrix came from a file.
    """

    csr: sp.csr_matrix
    scale: RatingScale
    raw_user_ids: tuple | None = None
    raw_item_ids: tuple | None = None

    @classmethod
    def from_entries(cls, users, items, ratings, n_users: int, n_items: int,
                     scale: RatingScale, raw_user_ids=None, raw_item_ids=None,
                     validate: bool = True) -> "RatingMatrix":
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        ratings = np.asarray(ratings, dtype=np.float64)
        if not (users.shape == items.shape == ratings.shape):
            raise DataError("entry arrays must have equal length")
        if validate:
            if users.size == 0:
                raise DataError("matrix has zero entries")
            if users.size and (users.min() < 0 or users.max() >= n_users):
                raise DataError("user index out of range")
            if items.size and (items.min() < 0 or items.max() >= n_items):
                raise DataError("item index out of range")
            keys = users * np.int64(n_items) + items
            if np.unique(keys).size != keys.size:
                raise DataError("duplicate (user, item) pair")
            if not scale.on_grid(ratings):
                raise DataError("rating outside declared scale or off its grid")
        m = sp.csr_matrix((ratings, (users, items)), shape=(n_users, n_items), dtype=np.float64)
        return cls._from_csr(m, scale,
                             raw_user_ids=tuple(raw_user_ids) if raw_user_ids is not None else None,
                             raw_item_ids=tuple(raw_item_ids) if raw_item_ids is not None else None)

    @classmethod
    def _from_csr(cls, m: sp.csr_matrix, scale: RatingScale,
                  raw_user_ids=None, raw_item_ids=None) -> "RatingMatrix":
        m.sort_indices()
        for arr in (m.data, m.indices, m.indptr):
            _freeze(arr)
        return cls(csr=m, scale=scale, raw_user_ids=raw_user_ids, raw_item_ids=raw_item_ids)

    @property
    def n_users(self) -> int:
        return self.csr.shape[0]

    @property
    def n_items(self) -> int:
        return self.csr.shape[1]

    @property
    def n_entries(self) -> int:
        return int(self.csr.nnz)

    def entry_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(users, items, ratings) in row-major order."""
        coo = self.csr.tocoo()
        return coo.row.astype(np.int64), coo.col.astype(np.int64), coo.data.copy()

    def user_row(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        """Items rated by `u` and the ratings, item-sorted."""
        if not 0 <= u < self.n_users:
            raise IndexError(f"user index {u} out of range")
        lo, hi = self.csr.indptr[u], self.csr.indptr[u + 1]
        return self.csr.indices[lo:hi].astype(np.int64), self.csr.data[lo:hi].copy()

    def user_counts(self) -> np.ndarray:
        return np.diff(self.csr.indptr).astype(np.int64)

    def item_counts(self) -> np.ndarray:
        counts = np.bincount(self.csr.indices, minlength=self.n_items)
        return counts.astype(np.int64)

    def rows_subset(self, users) -> "RatingMatrix":
        """Same-shape matrix keeping only the rows of `users` (others empty)."""
        users = np.unique(np.asarray(users, dtype=np.int64))
        if users.size and (users[0] < 0 or users[-1] >= self.n_users):
            raise IndexError("user index out of range")
        sub = self.csr[users]
        indptr = np.zeros(self.n_users + 1, dtype=sub.indptr.dtype)
        indptr[users + 1] = np.diff(sub.indptr)
        np.cumsum(indptr, out=indptr)
        m = sp.csr_matrix((sub.data.copy(), sub.indices.copy(), indptr),
                          shape=self.csr.shape)
        return RatingMatrix._from_csr(m, self.scale)

    def append_user_rows(self, rows: list[dict[int, float]]) -> "RatingMatrix":
        """New matrix with each dict in `rows` appended as one extra user."""
        uu, ii, rr = self.entry_arrays()
        add_u, add_i, add_r = [], [], []
        for j, row in enumerate(rows):
            for item, rating in row.items():
                add_u.append(self.n_users + j)
                add_i.append(int(item))
                add_r.append(float(rating))
        users = np.concatenate([uu, np.asarray(add_u, dtype=np.int64)])
        items = np.concatenate([ii, np.asarray(add_i, dtype=np.int64)])
        ratings = np.concatenate([rr, np.asarray(add_r, dtype=np.float64)])
        return RatingMatrix.from_entries(users, items, ratings,
                                         self.n_users + len(rows), self.n_items, self.scale)

    def dense(self) -> np.ndarray:
        return self.csr.toarray()

    def to_csv(self, path) -> None:
        """Write `user,item,rating` rows using raw ids when available."""
        uu, ii, rr = self.entry_arrays()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["user", "item", "rating"])
            for u, i, r in zip(uu, ii, rr):
                raw_u = self.raw_user_ids[u] if self.raw_user_ids else u
                raw_i = self.raw_item_ids[i] if self.raw_item_ids else i
                w.writerow([raw_u, raw_i, _format_rating(r)])


def _format_rating(r: float) -> str:
    return str(int(r)) if float(r).is_integer() else repr(float(r))


@dataclass(frozen=True)
class SplitDataset:
    """Leave-one-out split: one held-out (item, rating) per eligible user."""

    train: RatingMatrix
    test: dict[int, tuple[int, float]]
    seed: int


@dataclass(frozen=True)
class DatasetStats:
    avg_ratings_per_user: float
    global_mean: float
    global_std: float
    item_popularity: np.ndarray


def ingest_ratings(path, format: str = "movielens_tab",
                   scale: RatingScale | None = None) -> RatingMatrix:
    """Load a ratings file into a RatingMatrix with dense 0-based indices.

    `movielens_tab` lines are `user<TAB>item<TAB>rating[<TAB>timestamp]`;
    `csv` files carry a `user,item,rating` header. Raw ids are remapped in
    first-appearance order and retained. Duplicate (user, item) lines keep
    the last occurrence.
    """
    scale = scale or RatingScale()
    path = Path(path)
    if format not in ("movielens_tab", "csv"):
        raise DataError(f"unknown format {format!r}")
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    entries: dict[tuple[int, int], float] = {}

    lines = text.splitlines()
    if format == "csv":
        reader = csv.reader(lines)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if [h.strip().lower() for h in header[:3]] != ["user", "item", "rating"]:
            raise DataError(f"{path}: expected 'user,item,rating' header")
        records = ((row[0], row[1], row[2]) for row in reader if row)
    else:
        def _tab_records():
            for ln, line in enumerate(lines, 1):
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) < 3:
                    raise DataError(f"{path}:{ln}: expected user<TAB>item<TAB>rating")
                yield parts[0], parts[1], parts[2]
        records = _tab_records()

    for raw_u, raw_i, raw_r in records:
        raw_u, raw_i = raw_u.strip(), raw_i.strip()
        try:
            r = float(raw_r)
        except ValueError:
            raise DataError(f"{path}: bad rating {raw_r!r}") from None
        if not scale.on_grid([r]):
            raise DataError(f"{path}: rating {r} outside scale "
                            f"[{scale.min_rating}, {scale.max_rating}]")
        u = user_ids.setdefault(raw_u, len(user_ids))
        i = item_ids.setdefault(raw_i, len(item_ids))
        entries[(u, i)] = r

    if not entries:
        raise DataError(f"{path}: no rating entries")
    users = np.fromiter((k[0] for k in entries), dtype=np.int64, count=len(entries))
    items = np.fromiter((k[1] for k in entries), dtype=np.int64, count=len(entries))
    ratings = np.fromiter(entries.values(), dtype=np.float64, count=len(entries))
    return RatingMatrix.from_entries(users, items, ratings,
                                     len(user_ids), len(item_ids), scale,
                                     raw_user_ids=list(user_ids),
                                     raw_item_ids=list(item_ids))


def leave_one_out_split(matrix: RatingMatrix, seed: int) -> SplitDataset:
    """Hold out one uniformly chosen rating per user with >= 2 ratings.

    Users with a single rating stay in train and never appear in test.
    Deterministic for a given (matrix, seed).
    """
    if matrix.n_entries == 0:
        raise DataError("cannot split an empty matrix")
    rng = np.random.default_rng(seed)
    uu, ii, rr = matrix.entry_arrays()
    keep = np.ones(matrix.n_entries, dtype=bool)
    test: dict[int, tuple[int, float]] = {}
    indptr = matrix.csr.indptr
    for u in range(matrix.n_users):
        lo, hi = indptr[u], indptr[u + 1]
        if hi - lo < 2:
            continue
        pos = lo + int(rng.integers(hi - lo))
        keep[pos] = False
        test[u] = (int(ii[pos]), float(rr[pos]))
    train = RatingMatrix.from_entries(uu[keep], ii[keep], rr[keep],
                                      matrix.n_users, matrix.n_items, matrix.scale,
                                      raw_user_ids=matrix.raw_user_ids,
                                      raw_item_ids=matrix.raw_item_ids,
                                      validate=False)
    return SplitDataset(train=train, test=test, seed=seed)


def dataset_stats(matrix: RatingMatrix) -> DatasetStats:
    """Exact mean/std over all rating values plus per-item counts."""
    if matrix.n_entries == 0:
        raise DataError("empty matrix has no stats")
    ratings = matrix.csr.data
    return DatasetStats(
        avg_ratings_per_user=matrix.n_entries / matrix.n_users,
        global_mean=float(np.mean(ratings)),
        global_std=float(np.std(ratings)),
        item_popularity=_freeze(matrix.item_counts()),
    )


def select_target_items(matrix: RatingMatrix, count: int, seed: int) -> list[int]:
    """Draw `count` distinct non-popular items uniformly (seeded).

    Non-popular means a rating count at or below the median count of items
    having at least one rating.
    """
    counts = matrix.item_counts()
    live = counts >= 1
    if not live.any():
        raise DataError("no rated items to select from")
    median = float(np.median(counts[live]))
    pool = np.flatnonzero(live & (counts <= median))
    if pool.size < count:
        raise DataError(f"non-popular pool has {pool.size} items, need {count}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(pool, size=count, replace=False)
    return sorted(int(i) for i in chosen)


def make_synthetic_ratings(n_users: int, n_items: int, n_entries: int,
                           scale: RatingScale | None = None, seed: int = 0,
                           latent_dim: int = 8, noise: float = 0.6) -> RatingMatrix:
    """Seeded synthetic rating matrix with low-rank structure and a
    long-tailed item popularity, for desk-scale benchmarks when no real
    dataset file is at hand.

    Every item receives at least one rating; entry count is exact.
    """
    scale = scale or RatingScale()
    if n_entries < n_items or n_entries > n_users * n_items:
        raise DataError("n_entries must be within [n_items, n_users*n_items]")
    rng = np.random.default_rng(seed)

    uf = rng.normal(0.0, 1.0, size=(n_users, latent_dim)) / np.sqrt(latent_dim)
    vf = rng.normal(0.0, 1.0, size=(n_items, latent_dim))
    user_bias = rng.normal(0.0, 0.3, size=n_users)
    item_bias = rng.normal(0.0, 0.5, size=n_items)
    mid = 0.5 * (scale.min_rating + scale.max_rating)

    # Zipf-like popularity over a shuffled item order.
    pop = 1.0 / np.arange(1, n_items + 1) ** 0.8
    rng.shuffle(pop)
    pop /= pop.sum()
    user_act = rng.lognormal(0.0, 0.8, size=n_users)
    user_act /= user_act.sum()

    taken: set[int] = set()
    users_out = np.empty(n_entries, dtype=np.int64)
    items_out = np.empty(n_entries, dtype=np.int64)
    k = 0
    # One rating per item first so every item is live.
    first_users = rng.integers(0, n_users, size=n_items)
    for i in range(n_items):
        u = int(first_users[i])
        users_out[k] = u
        items_out[k] = i
        taken.add(u * n_items + i)
        k += 1
    while k < n_entries:
        m = int((n_entries - k) * 1.5) + 16
        us = rng.choice(n_users, size=m, p=user_act)
        its = rng.choice(n_items, size=m, p=pop)
        for u, i in zip(us, its):
            key = int(u) * n_items + int(i)
            if key in taken:
                continue
            taken.add(key)
            users_out[k] = u
            items_out[k] = i
            k += 1
            if k == n_entries:
                break

    raw = (mid + user_bias[users_out] + item_bias[items_out]
           + np.einsum("ij,ij->i", uf[users_out], vf[items_out])
           + rng.normal(0.0, noise, size=n_entries))
    ratings = scale.round_to_grid(raw)
    return RatingMatrix.from_entries(users_out, items_out, ratings,
                                     n_users, n_items, scale)
