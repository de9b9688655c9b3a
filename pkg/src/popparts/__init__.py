"""Pose-over-parts representation toolkit for multi-person 3D pose from depth.

Encodes poses into part maps (heatmaps, part depth, truncated displacement
fields) and an anchor-grid global pose map, fuses them back into 3D poses,
and scores the result with PCK and mAP. A capsule-figure renderer and an
oracle predictor drive the whole loop without a trained network.
"""

from .core import (
    DEFAULT_CAMERA,
    ITOP_SKELETON,
    BBox,
    CameraIntrinsics,
    DepthImage,
    Detection,
    Pose,
    Skeleton,
    bbox_from_pose,
    iou,
)
from .decoder import FusionConfig, decode_full
from .encoder import EncodedMaps, EncoderConfig, encode_scene
from .metrics import MetricConfig, evaluate

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_CAMERA",
    "ITOP_SKELETON",
    "BBox",
    "CameraIntrinsics",
    "DepthImage",
    "Detection",
    "EncodedMaps",
    "EncoderConfig",
    "FusionConfig",
    "MetricConfig",
    "Pose",
    "Skeleton",
    "bbox_from_pose",
    "decode_full",
    "encode_scene",
    "evaluate",
    "iou",
]
