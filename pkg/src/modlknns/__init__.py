"""Ensemble soft-label distillation with neighbor smoothing for noisy multi-label data."""
from .dataset import Dataset, RawLabel, SynthConfig, generate_synthetic, load_csv, split
from .estimators import DistilledMultiLabelMLP, MultiLabelMLP, SoftLabelEnsemble
from .evaluation import ARMS, EvalReport, ablation_report, roc_auc, roc_curve
from .labelkit import LabelPolicy, SoftLabelDistribution, aggregate_soft_labels, resolve
from .modelzoo import ModelSpec, Zoo, default_zoo, param_count
from .neighborhood import NeighborPool, build_neighbor_pool, local_similarity
from .objectives import LossWeights, bce_loss, distribution_loss, neighbor_loss, total_loss
from .trainer import TrainConfig, fit_network, lr_schedule

__version__ = "0.1.0"

__all__ = [
    "ARMS", "Dataset", "DistilledMultiLabelMLP", "EvalReport", "LabelPolicy", "LossWeights",
    "ModelSpec", "MultiLabelMLP", "NeighborPool", "RawLabel", "SoftLabelDistribution",
    "SoftLabelEnsemble", "SynthConfig", "TrainConfig", "Zoo", "ablation_report",
    "aggregate_soft_labels", "bce_loss", "build_neighbor_pool", "default_zoo",
    "distribution_loss", "fit_network", "generate_synthetic", "load_csv", "local_similarity",
    "lr_schedule", "neighbor_loss", "param_count", "resolve", "roc_auc", "roc_curve", "split",
    "total_loss",
]
