"""drivewatch: monocular driving-behavior analysis over frame sequences."""

from .behavior import BehaviorFeatures, Thresholds, Verdict, classify_rash
from .camera_geometry import (
    BevSpec,
    Calibration,
    Extrinsics,
    Intrinsics,
    WorldPoint,
    backproject_ground,
    distance_to_object,
    inverse_perspective_map,
    load_calibration,
    project_point,
)
from .config import PipelineConfig, load_config
from .detection import Detection, HogParams, Track, associate_tracks, hog_features, load_detections
from .imagekit import ImageF32, Pyramid, build_pyramid, rgb_to_lab, to_grayscale
from .lane_detection import LaneModel, Parabola, RansacParams, detect_lanes, ransac_parabola
from .optical_flow import FlowField, FlowParams, FlowStats, estimate_flow, flow_energy
from .pipeline import Event, render_overlay, run_pipeline

__all__ = [
    "BehaviorFeatures",
    "BevSpec",
    "Calibration",
    "Detection",
    "Event",
    "Extrinsics",
    "FlowField",
    "FlowParams",
    "FlowStats",
    "HogParams",
    "ImageF32",
    "Intrinsics",
    "LaneModel",
    "Parabola",
    "PipelineConfig",
    "Pyramid",
    "RansacParams",
    "Thresholds",
    "Track",
    "Verdict",
    "WorldPoint",
    "associate_tracks",
    "backproject_ground",
    "build_pyramid",
    "classify_rash",
    "detect_lanes",
    "distance_to_object",
    "estimate_flow",
    "flow_energy",
    "hog_features",
    "inverse_perspective_map",
    "load_calibration",
    "load_config",
    "load_detections",
    "project_point",
    "ransac_parabola",
    "render_overlay",
    "rgb_to_lab",
    "run_pipeline",
    "to_grayscale",
]

__version__ = "0.1.0"
