"""Rule-based rash-driving decision over per-frame-pair features.

Each consecutive frame pair contributes one feature vector: acceleration
proxies from region flow statistics, a wrong-direction score from lane-region
flow, lane-change counts from track offsets, and minimum object distances.
Independent threshold rules vote; the verdict is rash when enough rules fire.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera_geometry import BevSpec, Calibration, backproject_ground_grid
from .detection import Track
from .errors import InvalidInputError, NoLaneError
from .lane_detection import DEFAULT_LANE_WIDTH, LaneModel, lane_boundaries_at
from .optical_flow import FlowField, FlowStats

MIN_OPPOSING_SPEED = 0.5  # px/frame; slower vertical flow never counts as opposing
LANE_CHANGE_HYSTERESIS = 0.3  # meters around a boundary

RULE_FORWARD_ACCEL = "fast_forward_accel"
RULE_LATERAL_ACCEL = "fast_lateral_accel"
RULE_WRONG_DIRECTION = "wrong_direction"
RULE_LANE_CHANGES = "frequent_lane_change"
RULE_CAR_CLOSE = "car_too_close"
RULE_PERSON_CLOSE = "person_too_close"


@dataclass(frozen=True)
class BehaviorFeatures:
    frame_index: int
    forward_accel_proxy: float = 0.0  # px/frame^2, fps-scaled
    lateral_accel_proxy: float = 0.0
    wrong_direction_score: float = 0.0  # fraction in [0, 1]
    lane_changes_in_window: int = 0
    min_car_distance: float = math.inf  # meters
    min_person_distance: float = math.inf
    departure_angle: float = 0.0  # radians

    def __post_init__(self):
        if not 0.0 <= self.wrong_direction_score <= 1.0:
            raise InvalidInputError("wrong_direction_score must be in [0, 1]")
        if self.min_car_distance < 0 or self.min_person_distance < 0:
            raise InvalidInputError("distances must be nonnegative")
        if self.lane_changes_in_window < 0:
            raise InvalidInputError("lane change count must be nonnegative")


@dataclass(frozen=True)
class Thresholds:
    """Rule cut-offs; the defaults are tuned on the synthetic test scenes."""

    forward_accel_max: float = 40.0
    lateral_accel_max: float = 25.0
    wrong_direction_min: float = 0.6
    lane_changes_max: int = 2
    window_seconds: float = 5.0
    car_distance_min: float = 5.0
    person_distance_min: float = 8.0
    votes_required: int = 1

    def __post_init__(self):
        values = (
            self.forward_accel_max,
            self.lateral_accel_max,
            self.wrong_direction_min,
            self.lane_changes_max,
            self.window_seconds,
            self.car_distance_min,
            self.person_distance_min,
        )
        if any(v <= 0 for v in values):
            raise InvalidInputError("thresholds must be positive")
        if self.votes_required < 1:
            raise InvalidInputError("votes_required must be >= 1")


@dataclass(frozen=True)
class Verdict:
    frame_index: int
    rash: bool
    triggered_rules: tuple[str, ...]
    features: BehaviorFeatures

    def __post_init__(self):
        object.__setattr__(self, "triggered_rules", tuple(self.triggered_rules))


def detect_wrong_direction(
    flow: FlowField,
    model: LaneModel,
    calib: Calibration,
    bev: BevSpec,
    expected_sign: int,
) -> float:
    """Fraction of lane-region pixels whose vertical flow opposes traffic.

    The lane region is every frame pixel whose ground back-projection falls
    between the lane boundaries (a missing side is synthesized at the default
    lane width) with w inside the BEV's forward range. A pixel opposes when
    sign(v) == -expected_sign and |v| exceeds the speed floor.
    """
    if model.empty:
        raise NoLaneError("wrong-direction scoring needs a lane model")
    if expected_sign not in (1, -1):
        raise InvalidInputError("expected_sign must be +1 or -1")

    gy, gx = np.meshgrid(
        np.arange(flow.height, dtype=np.float64),
        np.arange(flow.width, dtype=np.float64),
        indexing="ij",
    )
    u, w, valid = backproject_ground_grid(gx, gy, calib)
    valid &= (w >= bev.w_min) & (w <= bev.w_max)
    if not valid.any():
        return 0.0

    wv = np.where(valid, w, bev.w_min)
    if model.left is not None and model.right is not None:
        left_u = model.left.a * wv**2 + model.left.b * wv + model.left.c
        right_u = model.right.a * wv**2 + model.right.b * wv + model.right.c
    elif model.left is not None:
        left_u = model.left.a * wv**2 + model.left.b * wv + model.left.c
        right_u = left_u + DEFAULT_LANE_WIDTH
    else:
        right_u = model.right.a * wv**2 + model.right.b * wv + model.right.c
        left_u = right_u - DEFAULT_LANE_WIDTH

    in_lane = valid & (u >= left_u) & (u <= right_u)
    total = int(in_lane.sum())
    if total == 0:
        return 0.0

    v = flow.v.astype(np.float64)
    opposing = in_lane & (np.abs(v) > MIN_OPPOSING_SPEED) & (np.sign(v) == -expected_sign)
    return float(opposing.sum()) / total


def _boundary_offsets(model: LaneModel | None, at_w: float) -> tuple[float, float]:
    """Lane boundaries in center-relative offset coordinates."""
    half = DEFAULT_LANE_WIDTH / 2.0
    if model is None or model.empty:
        return -half, half
    left_u, right_u = lane_boundaries_at(model, at_w)
    center = 0.5 * (left_u + right_u)
    return left_u - center, right_u - center


def count_lane_changes(
    track: Track,
    models: dict[int, LaneModel],
    window: int,
) -> int:
    """Boundary crossings of the track's lane offset inside the trailing window.

    A hysteresis band around each boundary suppresses jitter: the side state
    flips only once the offset clears the boundary by the hysteresis margin,
    and each flip counts one crossing.
    """
    if window < 2:
        raise InvalidInputError("window must cover at least 2 frames")
    if not track.history:
        return 0
    observations = [
        obs
        for obs in track.history
        if obs.lane_offset is not None and obs.frame_index > track.last_seen - window
    ]
    if len(observations) < 2:
        return 0

    crossings = 0
    for which in (0, 1):  # left boundary, right boundary
        state = None
        for obs in observations:
            at_w = obs.ground.w if obs.ground is not None else 10.0
            boundary = _boundary_offsets(models.get(obs.frame_index), at_w)[which]
            offset = obs.lane_offset
            if state is None:
                state = "above" if offset > boundary else "below"
                continue
            if state == "below" and offset > boundary + LANE_CHANGE_HYSTERESIS:
                state = "above"
                crossings += 1
            elif state == "above" and offset < boundary - LANE_CHANGE_HYSTERESIS:
                state = "below"
                crossings += 1
    return crossings


def combined_region_stats(flow: FlowField, regions: list) -> FlowStats | None:
    """Pixel-count weighted pooling of region_flow_stats over several boxes."""
    from .optical_flow import region_flow_stats
    from .errors import EmptyRegionError

    means_u, means_v, counts = [], [], []
    for region in regions:
        try:
            stats = region_flow_stats(flow, region)
        except EmptyRegionError:
            continue
        means_u.append(stats.mean_u)
        means_v.append(stats.mean_v)
        counts.append(stats.pixel_count)
    if not counts:
        return None
    total = sum(counts)
    mean_u = sum(m * c for m, c in zip(means_u, counts)) / total
    mean_v = sum(m * c for m, c in zip(means_v, counts)) / total
    return FlowStats(mean_u=mean_u, mean_v=mean_v, std_u=0.0, std_v=0.0, pixel_count=total)


def compute_features(
    frame_index: int,
    car_flow: FlowStats | None,
    prev_car_flow: FlowStats | None,
    wrong_direction_score: float | None,
    lane_changes: int,
    car_distances: list[float],
    person_distances: list[float],
    departure: float | None,
    fps: float,
) -> BehaviorFeatures:
    """Fuse module outputs into one feature vector.

    Acceleration proxies are fps-scaled first differences of the car-region
    flow means between consecutive pairs; anything missing stays neutral.
    """
    if fps <= 0:
        raise InvalidInputError("fps must be positive")
    forward = 0.0
    lateral = 0.0
    if car_flow is not None and prev_car_flow is not None:
        forward = (car_flow.mean_v - prev_car_flow.mean_v) * fps
        lateral = (car_flow.mean_u - prev_car_flow.mean_u) * fps
    return BehaviorFeatures(
        frame_index=frame_index,
        forward_accel_proxy=forward,
        lateral_accel_proxy=lateral,
        wrong_direction_score=wrong_direction_score or 0.0,
        lane_changes_in_window=lane_changes,
        min_car_distance=min(car_distances, default=math.inf),
        min_person_distance=min(person_distances, default=math.inf),
        departure_angle=departure or 0.0,
    )


def classify_rash(features: BehaviorFeatures, th: Thresholds) -> Verdict:
    """Evaluate every rule independently; rash when enough rules fire."""
    triggered = []
    if features.forward_accel_proxy > th.forward_accel_max:
        triggered.append(RULE_FORWARD_ACCEL)
    if features.lateral_accel_proxy > th.lateral_accel_max:
        triggered.append(RULE_LATERAL_ACCEL)
    if features.wrong_direction_score >= th.wrong_direction_min:
        triggered.append(RULE_WRONG_DIRECTION)
    if features.lane_changes_in_window >= th.lane_changes_max:
        triggered.append(RULE_LANE_CHANGES)
    if features.min_car_distance < th.car_distance_min:
        triggered.append(RULE_CAR_CLOSE)
    if features.min_person_distance < th.person_distance_min:
        triggered.append(RULE_PERSON_CLOSE)
    return Verdict(
        frame_index=features.frame_index,
        rash=len(triggered) >= th.votes_required,
        triggered_rules=tuple(triggered),
        features=features,
    )
