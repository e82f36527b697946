"""Shared contract for trainable recommenders: training, embeddings,
score prediction, subset fine-tuning, and exact snapshot/restore."""

from __future__ import annotations

import abc
import json
from dataclasses import dataclass, asdict

import numpy as np

from ..data import RatingMatrix, RatingScale

_CHECKPOINT_MAGIC = b"VICINALREC-MODEL v1\n"


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; the learning rate is too large."""


@dataclass(frozen=True)
class TrainConfig:
    embedding_dim: int = 16
    learning_rate: float = 0.002
    epochs: int = 150
    reg_lambda: float = 0.02
    seed: int = 0
    batch_mode: str = "full"  # "full" or "per_entry"

    def __post_init__(self):
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.reg_lambda < 0:
            raise ValueError("reg_lambda must be >= 0")
        if self.batch_mode not in ("full", "per_entry"):
            raise ValueError(f"unknown batch_mode {self.batch_mode!r}")


@dataclass(frozen=True)
class ModelParams:
    """Flat 64-bit copy of every trainable parameter plus its layout.

    `epoch` carries the pass counter so a restore also rewinds the
    stochastic-order stream; restore is bit-for-bit.
    """

    values: np.ndarray
    descriptor: tuple[tuple[str, tuple[int, ...]], ...]
    epoch: int

    def __post_init__(self):
        expected = sum(int(np.prod(shape)) for _, shape in self.descriptor)
        if self.values.size != expected:
            raise ValueError(f"flat length {self.values.size} does not match descriptor ({expected})")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameters must be finite")


class RecModel(abc.ABC):
    """A trainable recommender over a fixed user/item universe.

    Subclasses own their parameter arrays (`self._params`, an ordered
    name -> ndarray dict) and implement one training pass. Instances are
    mutable and must be confined to a single worker; `clone()` gives a
    cheap deep copy for concurrent serving.
    """

    kind: str = ""

    def __init__(self, config: TrainConfig):
        self.config = config
        self._params: dict[str, np.ndarray] = {}
        self._epoch = 0
        self.n_users = 0
        self.n_items = 0
        self.scale: RatingScale | None = None
        self.loss_history: list[float] = []
        self.data: RatingMatrix | None = None

    # -- subclass hooks -------------------------------------------------

    @abc.abstractmethod
    def _init_params(self, rng: np.random.Generator) -> None:
        """Populate self._params for the bound (n_users, n_items)."""

    @abc.abstractmethod
    def _pass(self, subset: RatingMatrix, lr: float, order_rng: np.random.Generator) -> None:
        """One training pass over the entries of `subset`."""

    @abc.abstractmethod
    def loss(self, data: RatingMatrix) -> float:
        """Squared-error objective on `data` plus the global regularizer."""

    @abc.abstractmethod
    def _grads(self, data: RatingMatrix) -> dict[str, np.ndarray]:
        """Exact full-batch gradient of `loss` w.r.t. every parameter."""

    @abc.abstractmethod
    def user_embedding(self, u: int) -> np.ndarray:
        ...

    @abc.abstractmethod
    def predict_scores(self, u: int) -> np.ndarray:
        ...

    # -- training -------------------------------------------------------

    def train(self, data: RatingMatrix) -> "RecModel":
        """Gradient-descent training for `config.epochs` passes; loss per
        pass is recorded. Deterministic given (data, config)."""
        self.n_users, self.n_items = data.n_users, data.n_items
        self.scale = data.scale
        self.data = data
        self._epoch = 0
        self.loss_history = []
        self._init_params(np.random.default_rng(self.config.seed))
        for _ in range(self.config.epochs):
            self._step_once(data, self.config.learning_rate)
            value = self.loss(data)
            if not np.isfinite(value):
                raise TrainingDiverged(f"{self.kind}: loss diverged at pass {self._epoch}")
            self.loss_history.append(value)
        return self

    def fine_tune(self, subset: RatingMatrix, steps: int, lr: float | None = None) -> "RecModel":
        """Run `steps` training passes over only the entries of `subset`.

        `subset` must share the model's user/item universe (use
        `RatingMatrix.rows_subset`); all parameters stay trainable.
        """
        if subset.n_users != self.n_users or subset.n_items != self.n_items:
            raise ValueError("subset universe does not match the model")
        if subset.n_entries == 0:
            raise ValueError("fine-tune subset is empty")
        if steps < 0:
            raise ValueError("steps must be >= 0")
        lr = self.config.learning_rate if lr is None else lr
        for _ in range(steps):
            self._step_once(subset, lr)
        if not np.isfinite(self.loss(subset)):
            raise TrainingDiverged(f"{self.kind}: fine-tune loss diverged")
        return self

    def _step_once(self, subset: RatingMatrix, lr: float) -> None:
        order_rng = np.random.default_rng([self.config.seed, self._epoch])
        self._pass(subset, lr, order_rng)
        self._epoch += 1

    def loss_gradient(self, data: RatingMatrix) -> np.ndarray:
        """Flat full-batch gradient aligned with `snapshot().values`."""
        grads = self._grads(data)
        return np.concatenate([grads[name].ravel() for name in self._params])

    # -- embeddings -----------------------------------------------------

    def all_user_embeddings(self) -> np.ndarray:
        """(n_users, e) embedding matrix; subclasses override when a
        vectorized form exists."""
        return np.stack([self.user_embedding(u) for u in range(self.n_users)])

    def _check_user(self, u: int) -> None:
        if not 0 <= u < self.n_users:
            raise IndexError(f"user index {u} out of range [0, {self.n_users})")

    def _require_data(self) -> RatingMatrix:
        if self.data is None:
            raise RuntimeError(f"{self.kind} model is not bound to a dataset; call train() or bind_data()")
        return self.data

    def bind_data(self, data: RatingMatrix) -> "RecModel":
        """Attach the rating rows a loaded checkpoint should predict from."""
        if data.n_users != self.n_users or data.n_items != self.n_items:
            raise ValueError("data dimensions do not match the checkpoint")
        self.data = data
        return self

    # -- snapshot / restore ----------------------------------------------

    def _descriptor(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        return tuple((name, tuple(arr.shape)) for name, arr in self._params.items())

    def snapshot(self) -> ModelParams:
        flat = np.concatenate([arr.ravel() for arr in self._params.values()]) \
            if self._params else np.empty(0)
        return ModelParams(values=flat, descriptor=self._descriptor(), epoch=self._epoch)

    def restore(self, params: ModelParams) -> None:
        if params.descriptor != self._descriptor():
            raise ValueError("snapshot descriptor does not match this model")
        offset = 0
        for name, arr in self._params.items():
            n = arr.size
            arr[...] = params.values[offset:offset + n].reshape(arr.shape)
            offset += n
        self._epoch = params.epoch

    def clone(self) -> "RecModel":
        other = type(self)(self.config)
        other.n_users, other.n_items = self.n_users, self.n_items
        other.scale = self.scale
        other.data = self.data
        other._epoch = self._epoch
        other.loss_history = list(self.loss_history)
        other._params = {name: arr.copy() for name, arr in self._params.items()}
        return other

    # -- checkpoint I/O ---------------------------------------------------

    def save(self, path) -> None:
        snap = self.snapshot()
        header = {
            "kind": self.kind,
            "n_users": self.n_users,
            "n_items": self.n_items,
            "epoch": snap.epoch,
            "config": asdict(self.config),
            "scale": asdict(self.scale) if self.scale else None,
            "arrays": [[name, list(shape)] for name, shape in snap.descriptor],
        }
        with open(path, "wb") as fh:
            fh.write(_CHECKPOINT_MAGIC)
            fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
            fh.write(np.ascontiguousarray(snap.values, dtype="<f8").tobytes())

    @staticmethod
    def load(path) -> "RecModel":
        from . import build_model  # registry lives in the package root
        with open(path, "rb") as fh:
            magic = fh.read(len(_CHECKPOINT_MAGIC))
            if magic != _CHECKPOINT_MAGIC:
                raise ValueError(f"{path}: not a model checkpoint")
            header = json.loads(fh.readline().decode("utf-8"))
            raw = fh.read()
        config = TrainConfig(**header["config"])
        model = build_model(header["kind"], config)
        model.n_users, model.n_items = header["n_users"], header["n_items"]
        model.scale = RatingScale(**header["scale"]) if header["scale"] else None
        model._init_params(np.random.default_rng(config.seed))
        descriptor = tuple((name, tuple(shape)) for name, shape in header["arrays"])
        values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        model.restore(ModelParams(values=values, descriptor=descriptor, epoch=header["epoch"]))
        return model
