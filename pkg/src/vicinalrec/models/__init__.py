"""Trainable recommenders sharing one contract: train, embed, predict,
fine-tune on a user subset, and exact parameter snapshot/restore."""

from .base import ModelParams, RecModel, TrainConfig, TrainingDiverged
from .autorec import AutoRec
from .mf import MatrixFactorization
from .nsvd import Nsvd

MODEL_KINDS: dict[str, type[RecModel]] = {
    MatrixFactorization.kind: MatrixFactorization,
    Nsvd.kind: Nsvd,
    AutoRec.kind: AutoRec,
}


def build_model(kind: str, config: TrainConfig) -> RecModel:
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(MODEL_KINDS)}") from None
    return cls(config)


__all__ = [
    "AutoRec",
    "MatrixFactorization",
    "ModelParams",
    "MODEL_KINDS",
    "Nsvd",
    "RecModel",
    "TrainConfig",
    "TrainingDiverged",
    "build_model",
]
