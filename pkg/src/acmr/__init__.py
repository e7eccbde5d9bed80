"""Aligned cross-modal representations for generalized zero-shot learning."""
from .alignment import wasserstein_gaussian
from .data import Dataset, SyntheticSpec, generate_synthetic, load_dataset, validate_split
from .evaluation import GzslMetrics, evaluate_gzsl, harmonic_mean, per_class_accuracy
from .trainer import ACMRModel, LossWeights, Schedule, TrainConfig, train_acmr, train_pipeline

__all__ = [
    "ACMRModel", "Dataset", "GzslMetrics", "LossWeights", "Schedule", "SyntheticSpec", "TrainConfig",
    "evaluate_gzsl", "generate_synthetic", "harmonic_mean", "load_dataset", "per_class_accuracy",
    "train_acmr", "train_pipeline", "validate_split", "wasserstein_gaussian",
]
__version__ = "0.1.0"
