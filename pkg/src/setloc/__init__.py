"""Permutation-invariant and sequential RSSI localization on a small numpy autograd."""

from .data import (
    ExperimentSpec,
    Scan,
    assemble_experiment,
    default_experiment,
    default_world,
    generate_synthetic,
    load_scans,
)
from .evaluation import Metrics, evaluate, export_plot_data
from .models import ARCHS, ModelConfig, build_model
from .training import NormStats, TrainConfig, fit_norm_stats, train

__version__ = "0.1.0"

__all__ = [
    "ARCHS",
    "ExperimentSpec",
    "Metrics",
    "ModelConfig",
    "NormStats",
    "Scan",
    "TrainConfig",
    "assemble_experiment",
    "build_model",
    "default_experiment",
    "default_world",
    "evaluate",
    "export_plot_data",
    "fit_norm_stats",
    "generate_synthetic",
    "load_scans",
    "train",
]
