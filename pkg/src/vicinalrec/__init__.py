"""Benchmark library for targeted poisoning attacks on collaborative
filtering and their mitigation by per-user vicinal fine-tuning at serve
time, with certified-unlearning bound calculators and verifiers."""

from .data import (
    DataError,
    DatasetStats,
    RatingMatrix,
    RatingScale,
    SplitDataset,
    dataset_stats,
    ingest_ratings,
    leave_one_out_split,
    make_synthetic_ratings,
    select_target_items,
)
from .models import (
    AutoRec,
    MatrixFactorization,
    ModelParams,
    Nsvd,
    RecModel,
    TrainConfig,
    TrainingDiverged,
    build_model,
)

__version__ = "0.1.0"
