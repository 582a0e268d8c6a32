"""Dual-stream egocentric 3D pose estimation: heatmap tokens + masked temporal attention + joint-query decoding."""

from .estimator import EgoPoseEstimator, HeatmapEstimator
from .losses import LossWeights, composite_loss, loss_bone, loss_cos, loss_pos
from .metrics import MetricReport, mpjpe, pa_mpjpe, umeyama
from .model import EgoPoseNet, ModelConfig
from .skeleton import FisheyeCamera, SkeletonTopology, bone_vectors, project_fisheye, rasterize_heatmaps

__all__ = [
    "EgoPoseEstimator",
    "EgoPoseNet",
    "FisheyeCamera",
    "HeatmapEstimator",
    "LossWeights",
    "MetricReport",
    "ModelConfig",
    "SkeletonTopology",
    "bone_vectors",
    "composite_loss",
    "loss_bone",
    "loss_cos",
    "loss_pos",
    "mpjpe",
    "pa_mpjpe",
    "project_fisheye",
    "rasterize_heatmaps",
    "umeyama",
]

__version__ = "0.1.0"
