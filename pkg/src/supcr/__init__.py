"""Supervised contrastive regression in numpy: the ranked pairwise loss, its theory checks, and a small training stack."""

from .batch import (
    AugmentationSpec,
    Dataset,
    GeneratorKind,
    GeneratorSpec,
    TwoViewBatch,
    build_two_view_batch,
    generate_synthetic_dataset,
)
from .errors import BatchSizeError, ConfigError, DomainError, NumericError, SupCRError, TrainingError
from .losses import supcr_loss_fast, supcr_loss_grad, supcr_loss_naive
from .model import MLP, LinearPredictor
from .pairwise import EmbeddingBatch, LabelDistanceKind, PairwiseMatrices, SimilarityKind, pairwise_matrices
from .theory import TheoryReport, distance_profile, lower_bound, optimize_similarities
from .training import EncoderLoss, Metrics, Scheme, TrainConfig, evaluate, train

__all__ = [
    "AugmentationSpec",
    "BatchSizeError",
    "ConfigError",
    "Dataset",
    "DomainError",
    "EmbeddingBatch",
    "EncoderLoss",
    "GeneratorKind",
    "GeneratorSpec",
    "LabelDistanceKind",
    "LinearPredictor",
    "MLP",
    "Metrics",
    "NumericError",
    "PairwiseMatrices",
    "Scheme",
    "SimilarityKind",
    "SupCRError",
    "TheoryReport",
    "TrainConfig",
    "TrainingError",
    "TwoViewBatch",
    "build_two_view_batch",
    "distance_profile",
    "evaluate",
    "generate_synthetic_dataset",
    "lower_bound",
    "optimize_similarities",
    "pairwise_matrices",
    "supcr_loss_fast",
    "supcr_loss_grad",
    "supcr_loss_naive",
    "train",
]
