"""Grain-matrix segmentation of sandstone photomicrographs.

End-to-end pipeline: a small reverse-mode autodiff tensor core, a
LinkNet-style encoder-decoder with a ResNet-18 style encoder, weighted
binary cross-entropy training, crop-based dataset construction, and
tiled inference with stitching.
"""

from .kernels import backend_name
from .metrics import (ClassWeights, ConfusionCounts, MetricsReport,
                      aggregate_report, compute_class_weights,
                      confusion_counts, segmentation_metrics, weighted_bce)
from .model import Model, ModelConfig, build_model, forward, param_count
from .rng import Rng
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "backend_name", "Tensor", "Rng",
    "Model", "ModelConfig", "build_model", "forward", "param_count",
    "ClassWeights", "ConfusionCounts", "MetricsReport", "aggregate_report",
    "compute_class_weights", "confusion_counts", "segmentation_metrics",
    "weighted_bce",
]
