"""Dual-contrastive embedding network for generalized zero-shot learning,
written against numpy with hand-derived gradients."""

from .config import MODES, TrainConfig, load_config
from .data import GZSLDataset, SynthConfig, generate_synthetic, load_dataset, validate_dataset
from .evaluator import GZSLReport, evaluate_gzsl, harmonic_mean, mean_class_accuracy, predict
from .trainer import TrainResult, TrainState, train, train_step

__version__ = "0.1.0"

__all__ = [
    "MODES", "TrainConfig", "load_config",
    "GZSLDataset", "SynthConfig", "generate_synthetic", "load_dataset", "validate_dataset",
    "GZSLReport", "evaluate_gzsl", "harmonic_mean", "mean_class_accuracy", "predict",
    "TrainResult", "TrainState", "train", "train_step",
]
