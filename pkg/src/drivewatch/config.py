"""Pipeline configuration: defaults plus the key = value config file.

Nested keys are dotted (flow.lambda = 10). Unknown keys are rejected at
startup so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .behavior import Thresholds
from .camera_geometry import BevSpec
from .detection import DEFAULT_IOU_THRESHOLD, DEFAULT_MAX_GAP, HogParams
from .errors import ConfigError, InvalidInputError
from .lane_detection import RansacParams
from .optical_flow import FlowParams

DETECTION_SOURCES = ("internal-template", "external-jsonl")


def _default_bev() -> BevSpec:
    return BevSpec(u_min=-10.0, u_max=10.0, w_min=4.0, w_max=40.0, meters_per_pixel=0.05)


@dataclass(frozen=True)
class PipelineConfig:
    fps: float = 30.0
    seed: int = 0
    detection_source: str = "external-jsonl"
    flow: FlowParams = field(default_factory=FlowParams)
    bev: BevSpec = field(default_factory=_default_bev)
    ransac: RansacParams = field(default_factory=RansacParams)
    hog: HogParams = field(default_factory=HogParams)
    thresholds: Thresholds = field(default_factory=Thresholds)
    car_offset: float = 0.0  # distance offsets per class, meters
    person_offset: float = 0.0
    expected_flow_sign: int = 1  # wrong-direction reference sign
    template_path: str | None = None
    template_class: str = "car"
    template_threshold: float = 0.0
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    max_gap: int = DEFAULT_MAX_GAP

    def __post_init__(self):
        if self.fps <= 0:
            raise InvalidInputError("fps must be positive")
        if self.detection_source not in DETECTION_SOURCES:
            raise InvalidInputError(
                f"detection_source must be one of {DETECTION_SOURCES}"
            )
        if self.expected_flow_sign not in (1, -1):
            raise InvalidInputError("wrong_direction.expected_sign must be +1 or -1")
        if not 0.0 < self.iou_threshold < 1.0:
            raise InvalidInputError("tracking.iou_threshold must be in (0, 1)")
        if self.max_gap < 0:
            raise InvalidInputError("tracking.max_gap must be >= 0")

    def class_offset(self, class_name: str) -> float:
        return self.car_offset if class_name == "car" else self.person_offset


def _parse_kv_lines(path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {line_no}: expected 'key = value'")
            key, _, val = line.partition("=")
            key = key.strip()
            if key in values:
                raise ConfigError(f"{path}: line {line_no}: duplicate key {key!r}")
            values[key] = val.strip()
    return values


def _to_int(key, raw):
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{key} expects an integer, got {raw!r}") from exc


def _to_float(key, raw):
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key} expects a number, got {raw!r}") from exc


# dotted key -> (config section, dataclass field, parser)
_KEY_TABLE = {
    "fps": ("", "fps", _to_float),
    "seed": ("", "seed", _to_int),
    "detection_source": ("", "detection_source", lambda k, v: v),
    "flow.lambda": ("flow", "smoothness_lambda", _to_float),
    "flow.penalty_epsilon": ("flow", "penalty_epsilon", _to_float),
    "flow.pyramid_levels": ("flow", "pyramid_levels", _to_int),
    "flow.downscale_factor": ("flow", "downscale_factor", _to_float),
    "flow.warps_per_level": ("flow", "warps_per_level", _to_int),
    "flow.solver_iterations_per_warp": ("flow", "solver_iterations_per_warp", _to_int),
    "flow.median_filter_radius": ("flow", "median_filter_radius", _to_int),
    "bev.u_min": ("bev", "u_min", _to_float),
    "bev.u_max": ("bev", "u_max", _to_float),
    "bev.w_min": ("bev", "w_min", _to_float),
    "bev.w_max": ("bev", "w_max", _to_float),
    "bev.meters_per_pixel": ("bev", "meters_per_pixel", _to_float),
    "ransac.iterations": ("ransac", "iterations", _to_int),
    "ransac.inlier_threshold": ("ransac", "inlier_threshold", _to_float),
    "ransac.min_inliers": ("ransac", "min_inliers", _to_int),
    "hog.cell_size": ("hog", "cell_size", _to_int),
    "hog.bins": ("hog", "bins", _to_int),
    "hog.block_size": ("hog", "block_size", _to_int),
    "hog.block_stride": ("hog", "block_stride", _to_int),
    "hog.clip": ("hog", "clip", _to_float),
    "thresholds.forward_accel_max": ("thresholds", "forward_accel_max", _to_float),
    "thresholds.lateral_accel_max": ("thresholds", "lateral_accel_max", _to_float),
    "thresholds.wrong_direction_min": ("thresholds", "wrong_direction_min", _to_float),
    "thresholds.lane_changes_max": ("thresholds", "lane_changes_max", _to_int),
    "thresholds.window_seconds": ("thresholds", "window_seconds", _to_float),
    "thresholds.car_distance_min": ("thresholds", "car_distance_min", _to_float),
    "thresholds.person_distance_min": ("thresholds", "person_distance_min", _to_float),
    "thresholds.votes_required": ("thresholds", "votes_required", _to_int),
    "offsets.car": ("", "car_offset", _to_float),
    "offsets.person": ("", "person_offset", _to_float),
    "wrong_direction.expected_sign": ("", "expected_flow_sign", _to_int),
    "detection.template_path": ("", "template_path", lambda k, v: v),
    "detection.template_class": ("", "template_class", lambda k, v: v),
    "detection.score_threshold": ("", "template_threshold", _to_float),
    "tracking.iou_threshold": ("", "iou_threshold", _to_float),
    "tracking.max_gap": ("", "max_gap", _to_int),
}


def load_config(path) -> PipelineConfig:
    """Build a validated PipelineConfig from a config file."""
    raw = _parse_kv_lines(path)
    top: dict[str, object] = {}
    sections: dict[str, dict[str, object]] = {"flow": {}, "bev": {}, "ransac": {}, "hog": {}, "thresholds": {}}

    for key, raw_value in raw.items():
        if key not in _KEY_TABLE:
            raise ConfigError(f"{path}: unknown config key {key!r}")
        section, name, parser = _KEY_TABLE[key]
        try:
            value = parser(key, raw_value)
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if section:
            sections[section][name] = value
        else:
            top[name] = value

    try:
        return PipelineConfig(
            flow=FlowParams(**sections["flow"]),
            bev=BevSpec(**{**_bev_defaults(), **sections["bev"]}),
            ransac=RansacParams(**sections["ransac"]),
            hog=HogParams(**sections["hog"]),
            thresholds=Thresholds(**sections["thresholds"]),
            **top,
        )
    except InvalidInputError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _bev_defaults() -> dict[str, float]:
    bev = _default_bev()
    return {
        "u_min": bev.u_min,
        "u_max": bev.u_max,
        "w_min": bev.w_min,
        "w_max": bev.w_max,
        "meters_per_pixel": bev.meters_per_pixel,
    }


def with_seed(config: PipelineConfig, seed: int) -> PipelineConfig:
    return replace(config, seed=seed)
