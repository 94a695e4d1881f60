"""Weakly supervised urban tree-cover mapping.

LiDAR point clouds are rasterized into neighbourhood statistics, thresholded
into noisy tree labels, and used to train a Gaussian-kernel SVM on 4-band
imagery; predictions from different years are compared for tree-cover change.
"""

__version__ = "0.1.0"

from .change import ChangeReport, Window, change, overlay_png
from .metrics import ConfusionCounts, MetricsReport, confusion, metrics
from .pointcloud import BoundingBox, LidarPoint, PointCloud, compute_bounds, parse_las, parse_xyz_text
from .raster import (
    BinaryMask,
    CategoricalRaster,
    GridSpec,
    MultibandRaster,
    Raster,
    resample_nearest,
)
from .rules import default_tree_rule, evaluate_rule, format_rule, parse_rule
from .stats import StatsStack, rasterize_stats, stack_to_pseudo_rgb
from .svm import (
    SampleSet,
    SvmModel,
    TrainConfig,
    decision_value,
    extract_training_samples,
    predict_mask,
    train_svm,
)

__all__ = [
    "BinaryMask",
    "BoundingBox",
    "CategoricalRaster",
    "ChangeReport",
    "ConfusionCounts",
    "GridSpec",
    "LidarPoint",
    "MetricsReport",
    "MultibandRaster",
    "PointCloud",
    "Raster",
    "SampleSet",
    "StatsStack",
    "SvmModel",
    "TrainConfig",
    "Window",
    "change",
    "compute_bounds",
    "confusion",
    "decision_value",
    "default_tree_rule",
    "evaluate_rule",
    "extract_training_samples",
    "format_rule",
    "metrics",
    "overlay_png",
    "parse_las",
    "parse_rule",
    "parse_xyz_text",
    "predict_mask",
    "rasterize_stats",
    "resample_nearest",
    "stack_to_pseudo_rgb",
    "train_svm",
]
