"""Sparse Bayesian neural networks with spike-and-slab weights and normalizing flows."""
from .autodiff import NonFiniteError, ShapeError, Tape, Tensor, gradient
from .config import ConfigError, ExperimentConfig, load_config
from .data import DataError, Dataset, gen_clusters, gen_logreg, load_idx_dataset, read_idx
from .layers import LayerInit, SpikeSlabLinear
from .metrics import accuracy, entropy, ood_detect, predict_avg, tpr_fpr
from .network import Architecture, build_model
from .rng import RngStream
from .training import TrainConfig, TrainingDiverged, train

__all__ = [
    "Architecture", "ConfigError", "DataError", "Dataset", "ExperimentConfig", "LayerInit",
    "NonFiniteError", "RngStream", "ShapeError", "SpikeSlabLinear", "Tape", "Tensor",
    "TrainConfig", "TrainingDiverged", "accuracy", "build_model", "entropy", "gen_clusters",
    "gen_logreg", "gradient", "load_config", "load_idx_dataset", "ood_detect", "predict_avg",
    "read_idx", "tpr_fpr", "train",
]
