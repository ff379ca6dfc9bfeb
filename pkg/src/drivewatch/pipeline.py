"""Frame-pair analysis driver: events, summary, overlays.

Consecutive frames are paired in index order. Every pair contributes flow,
lanes, detections, track updates and one verdict; triggered rules become
events appended to the JSONL output, stamped with the pair's later frame.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import netpbm
from .behavior import (
    RULE_CAR_CLOSE,
    RULE_FORWARD_ACCEL,
    RULE_LANE_CHANGES,
    RULE_LATERAL_ACCEL,
    RULE_PERSON_CLOSE,
    RULE_WRONG_DIRECTION,
    classify_rash,
    combined_region_stats,
    compute_features,
    count_lane_changes,
    detect_wrong_direction,
)
from .camera_geometry import (
    BevSpec,
    Calibration,
    distance_to_object,
    load_calibration,
    object_ground_point,
    project_point,
    WorldPoint,
)
from .config import PipelineConfig
from .detection import (
    Detection,
    Track,
    associate_tracks,
    load_detections_tolerant,
    load_template,
    score_template,
)
from .errors import BehindCameraError, ConfigError, NotOnGroundError
from .imagekit import ImageF32, build_pyramid, to_grayscale
from .lane_detection import LaneModel, assign_lane, departure_angle, detect_lanes
from .optical_flow import FlowField, estimate_flow
from .seeding import derive_seed

EVENT_TYPES = ("lane_change", "wrong_direction", "proximity", "accel", "rash_verdict", "error")

_FRAME_NAME = re.compile(r"^(\d+)\.(pgm|ppm)$")

_RULE_EVENT_TYPE = {
    RULE_FORWARD_ACCEL: "accel",
    RULE_LATERAL_ACCEL: "accel",
    RULE_WRONG_DIRECTION: "wrong_direction",
    RULE_LANE_CHANGES: "lane_change",
    RULE_CAR_CLOSE: "proximity",
    RULE_PERSON_CLOSE: "proximity",
}


@dataclass(frozen=True)
class Event:
    frame_index: int
    type: str
    payload: dict

    def to_json(self) -> str:
        return json.dumps(
            {"frame": self.frame_index, "type": self.type, "payload": self.payload},
            sort_keys=True,
            separators=(",", ":"),
        )


class StartupError(RuntimeError):
    """Raised before any output is produced; maps to exit code 1."""


def list_frames(frames_dir) -> list[tuple[int, Path]]:
    """Numbered frame files in index order."""
    directory = Path(frames_dir)
    if not directory.is_dir():
        raise StartupError(f"frames directory {frames_dir} does not exist")
    frames = []
    for entry in directory.iterdir():
        match = _FRAME_NAME.match(entry.name)
        if match:
            frames.append((int(match.group(1)), entry))
    frames.sort(key=lambda pair: pair[0])
    if len(frames) < 2:
        raise StartupError(f"need at least 2 frames in {frames_dir}, found {len(frames)}")
    return frames


def _ensure_rgb(img: ImageF32) -> ImageF32:
    if img.channels == 3:
        return img
    return ImageF32(np.repeat(img.pixels[:, :, None], 3, axis=2))


def _json_safe(value):
    if isinstance(value, float) and math.isinf(value):
        return None
    return value


def _min_distance_and_track(tracks: list[Track], frame: int, class_name: str):
    best = math.inf
    best_id = None
    for track in tracks:
        if track.class_name != class_name or not track.history:
            continue
        obs = track.history[-1]
        if obs.frame_index != frame or obs.ground is None:
            continue
        if obs.distance is not None and obs.distance < best:
            best = obs.distance
            best_id = track.track_id
    return best, best_id


def run_pipeline(
    config: PipelineConfig,
    frames_dir,
    calib_path,
    out_path,
    detections_path=None,
    overlay_dir=None,
) -> dict:
    """Analyze a frame sequence; returns the run summary.

    Startup problems raise StartupError before anything is written. Per-line
    detection file problems become events of type "error" and processing
    continues.
    """
    frames = list_frames(frames_dir)
    try:
        calib = load_calibration(calib_path)
    except (OSError, ConfigError) as exc:
        raise StartupError(f"cannot load calibration: {exc}") from exc

    template = None
    if config.detection_source == "internal-template":
        if not config.template_path:
            raise StartupError("detection_source internal-template needs detection.template_path")
        try:
            template = load_template(config.template_path, config.hog, config.template_class)
        except (OSError, ValueError) as exc:
            raise StartupError(f"cannot load template: {exc}") from exc

    external: dict[int, list[Detection]] = {}
    file_errors = []
    if detections_path is not None:
        try:
            external, file_errors = load_detections_tolerant(detections_path)
        except OSError as exc:
            raise StartupError(f"cannot read detections: {exc}") from exc

    if overlay_dir is not None:
        Path(overlay_dir).mkdir(parents=True, exist_ok=True)

    events: list[Event] = []
    tracks: list[Track] = []
    models: dict[int, LaneModel] = {}
    prev_car_stats = None
    rash_frames = 0
    window_frames = max(2, int(round(config.thresholds.window_seconds * config.fps)))

    images: dict[int, ImageF32] = {}

    def frame_image(pos: int) -> ImageF32:
        if pos not in images:
            images[pos] = netpbm.read_image(frames[pos][1])
        return images[pos]

    first_pair_frame = frames[1][0]
    for error in file_errors:
        events.append(
            Event(first_pair_frame, "error", {"line": error.line_number, "message": str(error)})
        )

    for pos in range(len(frames) - 1):
        fi = frames[pos + 1][0]
        img1 = frame_image(pos)
        img2 = frame_image(pos + 1)
        images.pop(pos, None)

        gray1 = to_grayscale(img1) if img1.channels == 3 else img1
        gray2 = to_grayscale(img2) if img2.channels == 3 else img2
        flow = estimate_flow(gray1, gray2, config.flow)

        lane_model = detect_lanes(
            _ensure_rgb(img2),
            calib,
            config.bev,
            replace(config.ransac, seed=derive_seed(config.seed, f"ransac/{fi}")),
            frame_index=fi,
        )
        models[fi] = lane_model

        if config.detection_source == "internal-template":
            pyramid = build_pyramid(gray2, 2, 0.5)
            dets = score_template(
                pyramid, template, config.hog, config.template_threshold, frame_index=fi
            )
        else:
            dets = external.get(fi, [])
        if dets:
            tracks = associate_tracks(tracks, dets, config.iou_threshold, config.max_gap)

        for track in tracks:
            obs = track.history[-1]
            if obs.frame_index != fi or obs.ground is not None:
                continue
            try:
                obs.ground = object_ground_point(obs.bbox, calib)
                obs.distance = distance_to_object(
                    obs.bbox, calib, config.class_offset(track.class_name)
                )
            except NotOnGroundError:
                continue
            if not lane_model.empty:
                obs.lane_offset, _ = assign_lane(obs.ground.u, lane_model, obs.ground.w)

        car_boxes = [d.bbox for d in dets if d.class_name == "car"]
        car_stats = combined_region_stats(flow, car_boxes)

        wrong_score = None
        departure = None
        if not lane_model.empty:
            wrong_score = detect_wrong_direction(
                flow, lane_model, calib, config.bev, config.expected_flow_sign
            )
            departure = departure_angle(
                lane_model, 0.5 * (config.bev.w_min + config.bev.w_max)
            )

        lane_changes = 0
        worst_track = None
        for track in tracks:
            if track.class_name != "car":
                continue
            count = count_lane_changes(track, models, window_frames)
            if count > lane_changes:
                lane_changes = count
                worst_track = track.track_id

        car_distance, car_track = _min_distance_and_track(tracks, fi, "car")
        person_distance, person_track = _min_distance_and_track(tracks, fi, "person")

        features = compute_features(
            fi,
            car_stats,
            prev_car_stats,
            wrong_score,
            lane_changes,
            [car_distance] if math.isfinite(car_distance) else [],
            [person_distance] if math.isfinite(person_distance) else [],
            departure,
            config.fps,
        )
        prev_car_stats = car_stats

        verdict = classify_rash(features, config.thresholds)

        emitted: dict[str, dict] = {}
        for rule in verdict.triggered_rules:
            kind = _RULE_EVENT_TYPE[rule]
            payload = emitted.setdefault(kind, {"rules": []})
            payload["rules"].append(rule)
        if "accel" in emitted:
            emitted["accel"].update(
                forward=features.forward_accel_proxy, lateral=features.lateral_accel_proxy
            )
        if "wrong_direction" in emitted:
            emitted["wrong_direction"].update(score=features.wrong_direction_score)
        if "lane_change" in emitted:
            emitted["lane_change"].update(count=lane_changes, track_id=worst_track)
        if "proximity" in emitted:
            emitted["proximity"].update(
                car_distance=_json_safe(features.min_car_distance),
                person_distance=_json_safe(features.min_person_distance),
                track_id=car_track if car_track is not None else person_track,
            )
        for kind in ("lane_change", "wrong_direction", "proximity", "accel"):
            if kind in emitted:
                events.append(Event(fi, kind, emitted[kind]))

        if verdict.rash:
            rash_frames += 1
            events.append(
                Event(
                    fi,
                    "rash_verdict",
                    {
                        "rules": list(verdict.triggered_rules),
                        "track_id": car_track if car_track is not None else person_track,
                    },
                )
            )

        if overlay_dir is not None:
            overlay = render_overlay(img2, lane_model, dets, flow, calib, config.bev)
            netpbm.write_image(Path(overlay_dir) / f"{fi:06d}.ppm", overlay)

    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        for event in events:
            fh.write(event.to_json())
            fh.write("\n")

    by_type = {kind: 0 for kind in EVENT_TYPES}
    for event in events:
        by_type[event.type] += 1
    return {
        "frames": len(frames),
        "pairs_processed": len(frames) - 1,
        "events_by_type": by_type,
        "rash_frames": rash_frames,
        "had_errors": any(e.type == "error" for e in events),
    }


# ---------------------------------------------------------------------------
# overlay rendering

_LANE_COLOR = (0.1, 0.9, 0.1)
_CAR_COLOR = (0.95, 0.15, 0.15)
_PERSON_COLOR = (0.15, 0.25, 0.95)
_FLOW_COLOR = (0.95, 0.9, 0.1)
_MIN_ARROW = 0.5  # px; shorter flow vectors are not drawn


def _put(px: np.ndarray, x: int, y: int, color) -> None:
    if 0 <= x < px.shape[1] and 0 <= y < px.shape[0]:
        px[y, x, 0] = color[0]
        px[y, x, 1] = color[1]
        px[y, x, 2] = color[2]


def _draw_line(px: np.ndarray, x0, y0, x1, y1, color) -> None:
    """Integer Bresenham segment, endpoints rounded."""
    x0, y0, x1, y1 = int(round(x0)), int(round(y0)), int(round(x1)), int(round(y1))
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        _put(px, x0, y0, color)
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def _draw_rect(px: np.ndarray, bbox, color) -> None:
    x, y, w, h = bbox
    _draw_line(px, x, y, x + w, y, color)
    _draw_line(px, x + w, y, x + w, y + h, color)
    _draw_line(px, x + w, y + h, x, y + h, color)
    _draw_line(px, x, y + h, x, y, color)


def render_overlay(
    frame: ImageF32,
    model: LaneModel,
    detections: list[Detection],
    flow: FlowField,
    calib: Calibration,
    bev: BevSpec,
    stride: int = 16,
) -> ImageF32:
    """Lanes, boxes and flow arrows drawn over an RGB copy of the frame."""
    rgb = _ensure_rgb(frame)
    if (flow.height, flow.width) != (frame.height, frame.width):
        raise ConfigError("flow dimensions differ from the frame")
    px = rgb.pixels.copy()

    for side in (model.left, model.right):
        if side is None:
            continue
        prev = None
        for w in np.linspace(bev.w_min, bev.w_max, 48):
            point = WorldPoint(side.u_at(float(w)), 0.0, float(w))
            try:
                x, y = project_point(point, calib)
            except BehindCameraError:
                prev = None
                continue
            if not (0 <= x < frame.width and 0 <= y < frame.height):
                prev = None
                continue
            if prev is not None:
                _draw_line(px, prev[0], prev[1], x, y, _LANE_COLOR)
            prev = (x, y)

    for det in detections:
        color = _CAR_COLOR if det.class_name == "car" else _PERSON_COLOR
        _draw_rect(px, det.bbox, color)

    for y in range(stride // 2, frame.height, stride):
        for x in range(stride // 2, frame.width, stride):
            u = float(flow.u[y, x])
            v = float(flow.v[y, x])
            if math.hypot(u, v) < _MIN_ARROW:
                continue
            _draw_line(px, x, y, x + u, y + v, _FLOW_COLOR)

    return ImageF32(px)
