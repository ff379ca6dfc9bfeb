"""Lane boundaries from the bird's-eye view.

The L* channel is warped to the ground plane, ridge-filtered with steerable
filters, and the brightest candidates are fit with a parabolic road model
u(w) = a w^2 + b w + c per side using RANSAC. Lateral positions, departure
angle and lane zones are all evaluated on those curves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .camera_geometry import BevSpec, Calibration, bev_visibility_mask, inverse_perspective_map
from .errors import InsufficientDataError, InvalidInputError, NoConsensusError, NoLaneError
from .imagekit import ImageF32, rgb_to_lab, steerable_filter_response
from .seeding import derive_seed

DEFAULT_LANE_WIDTH = 3.6  # meters, single-side fallback
CANDIDATE_QUANTILE = 0.98  # keep the top 2% of the ridge response
MIN_CANDIDATE_RESPONSE = 0.1
STEER_ORIENTATIONS = (-math.pi / 12.0, 0.0, math.pi / 12.0)


@dataclass(frozen=True)
class Parabola:
    a: float  # 1/m
    b: float  # dimensionless
    c: float  # m

    def __post_init__(self):
        if not all(math.isfinite(x) for x in (self.a, self.b, self.c)):
            raise InvalidInputError("parabola coefficients must be finite")

    def u_at(self, w: float) -> float:
        return self.a * w * w + self.b * w + self.c

    def slope_at(self, w: float) -> float:
        return 2.0 * self.a * w + self.b


@dataclass(frozen=True)
class LaneModel:
    left: Parabola | None = None
    right: Parabola | None = None
    inlier_count_left: int = 0
    inlier_count_right: int = 0
    frame_index: int = 0

    def __post_init__(self):
        if self.left is not None and self.right is not None:
            if not self.right.c > self.left.c:
                raise InvalidInputError("right boundary must lie right of the left one")

    @property
    def empty(self) -> bool:
        return self.left is None and self.right is None


@dataclass(frozen=True)
class RansacParams:
    iterations: int = 500
    inlier_threshold: float = 0.15  # meters
    min_inliers: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidInputError("iterations must be >= 1")
        if self.inlier_threshold <= 0:
            raise InvalidInputError("inlier_threshold must be positive")
        if self.min_inliers < 3:
            raise InvalidInputError("min_inliers must be >= 3")


class LaneZone(Enum):
    LEFT_OF_LANE = "left-of-lane"
    IN_LANE = "in-lane"
    RIGHT_OF_LANE = "right-of-lane"


def lane_pixel_response(bev: ImageF32, sigma: float = 2.0) -> ImageF32:
    """Ridge response for near-vertical lane paint in the BEV, in [0, 1].

    Max over a small orientation fan of (|order-2| + |order-4|) / 2,
    normalized by the image maximum.
    """
    if bev.channels != 1:
        raise InvalidInputError("lane_pixel_response expects a single-channel image")
    combined = np.zeros((bev.height, bev.width), dtype=np.float64)
    for theta in STEER_ORIENTATIONS:
        g2 = steerable_filter_response(bev, 2, theta, sigma).pixels
        g4 = steerable_filter_response(bev, 4, theta, sigma).pixels
        combined = np.maximum(combined, 0.5 * (np.abs(g2) + np.abs(g4)))
    peak = combined.max()
    if peak <= 1e-9:
        return ImageF32(np.zeros_like(combined))
    return ImageF32(combined / peak)


def _solve_parabola(ws, us):
    vander = np.stack([ws * ws, ws, np.ones_like(ws)], axis=1)
    coeffs = np.linalg.solve(vander, us)
    return coeffs


def ransac_parabola(
    points: list[tuple[float, float]] | np.ndarray, params: RansacParams
) -> tuple[Parabola, np.ndarray]:
    """Classic RANSAC fit of u = a w^2 + b w + c over (w, u) samples.

    Draws 3-point samples, counts inliers within the lateral threshold, and
    least-squares refits on the best consensus set. Deterministic for a
    fixed seed. Returns the parabola and the consensus inlier indices.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] < 3:
        raise InsufficientDataError(f"need at least 3 points, got {pts.shape[0]}")
    ws = pts[:, 0]
    us = pts[:, 1]

    rng = np.random.default_rng(params.seed)
    best_inliers: np.ndarray | None = None
    best_count = -1
    for _ in range(params.iterations):
        pick = rng.choice(pts.shape[0], size=3, replace=False)
        try:
            a, b, c = _solve_parabola(ws[pick], us[pick])
        except np.linalg.LinAlgError:
            continue
        residual = np.abs(us - (a * ws * ws + b * ws + c))
        inliers = residual <= params.inlier_threshold
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers

    if best_inliers is None or best_count < max(params.min_inliers, 3):
        raise NoConsensusError(
            f"best consensus has {max(best_count, 0)} inliers, below {params.min_inliers}"
        )

    idx = np.nonzero(best_inliers)[0]
    vander = np.stack([ws[idx] ** 2, ws[idx], np.ones(idx.size)], axis=1)
    a, b, c = np.linalg.lstsq(vander, us[idx], rcond=None)[0]
    return Parabola(float(a), float(b), float(c)), idx


def _fit_side(points, params, label):
    if len(points) < 3:
        return None, 0
    try:
        parabola, inliers = ransac_parabola(
            points,
            RansacParams(
                iterations=params.iterations,
                inlier_threshold=params.inlier_threshold,
                min_inliers=params.min_inliers,
                seed=derive_seed(params.seed, label),
            ),
        )
        return parabola, int(inliers.size)
    except (NoConsensusError, InsufficientDataError):
        return None, 0


def detect_lanes(
    frame: ImageF32,
    calib: Calibration,
    bev: BevSpec,
    ransac: RansacParams,
    sigma: float = 2.0,
    frame_index: int = 0,
) -> LaneModel:
    """Per-frame lane fit; a side with no consensus is simply absent."""
    if frame.channels != 3:
        raise InvalidInputError("detect_lanes expects an RGB frame")
    lab = rgb_to_lab(frame)
    lightness = ImageF32(lab.pixels[:, :, 0])
    bev_img = inverse_perspective_map(lightness, calib, bev)
    response = lane_pixel_response(bev_img, sigma).pixels

    # the boundary of the camera's ground footprint is a strong false ridge;
    # keep only candidates whose filter support lies fully in view
    margin = int(math.ceil(4.0 * sigma)) + 1
    visible = ndimage.binary_erosion(
        bev_visibility_mask(calib, bev), structure=np.ones((2 * margin + 1, 2 * margin + 1))
    )
    response = np.where(visible, response, 0.0)

    threshold = max(float(np.quantile(response, CANDIDATE_QUANTILE)), MIN_CANDIDATE_RESPONSE)
    rows, cols = np.nonzero(response >= threshold)
    if rows.size == 0:
        return LaneModel(frame_index=frame_index)

    u, w = bev.ground_of_pixel(cols, rows)
    candidates = np.stack([w, u], axis=1)
    mid = 0.5 * (bev.u_min + bev.u_max)
    left_pts = candidates[u < mid]
    right_pts = candidates[u >= mid]

    left, n_left = _fit_side(left_pts, ransac, "lane/left")
    right, n_right = _fit_side(right_pts, ransac, "lane/right")

    # ordering invariant: on a crossed fit keep the better-supported side
    if left is not None and right is not None and not right.c > left.c:
        if n_left >= n_right:
            right, n_right = None, 0
        else:
            left, n_left = None, 0

    return LaneModel(
        left=left,
        right=right,
        inlier_count_left=n_left,
        inlier_count_right=n_right,
        frame_index=frame_index,
    )


def departure_angle(model: LaneModel, evaluation_w: float) -> float:
    """Heading of the ego axis relative to the lane direction, radians.

    The lane heading is atan(du/dw) averaged over present sides; the ego
    heading is the +w axis, so the departure angle is the negated lane
    heading.
    """
    if model.empty:
        raise NoLaneError("no lane boundary available")
    headings = [
        math.atan(side.slope_at(evaluation_w))
        for side in (model.left, model.right)
        if side is not None
    ]
    return -sum(headings) / len(headings)


def lane_center_at(model: LaneModel, w: float) -> float:
    """Lane-center lateral position; single sides fall back to the default width."""
    if model.empty:
        raise NoLaneError("no lane boundary available")
    if model.left is not None and model.right is not None:
        return 0.5 * (model.left.u_at(w) + model.right.u_at(w))
    if model.left is not None:
        return model.left.u_at(w) + DEFAULT_LANE_WIDTH / 2.0
    return model.right.u_at(w) - DEFAULT_LANE_WIDTH / 2.0


def lane_boundaries_at(model: LaneModel, w: float) -> tuple[float, float]:
    """(left_u, right_u) at forward distance w, synthesizing a missing side."""
    if model.empty:
        raise NoLaneError("no lane boundary available")
    if model.left is not None and model.right is not None:
        return model.left.u_at(w), model.right.u_at(w)
    if model.left is not None:
        lu = model.left.u_at(w)
        return lu, lu + DEFAULT_LANE_WIDTH
    ru = model.right.u_at(w)
    return ru - DEFAULT_LANE_WIDTH, ru


def assign_lane(ground_u: float, model: LaneModel, at_w: float) -> tuple[float, LaneZone]:
    """Signed offset from the lane center and the zone at that offset."""
    left_u, right_u = lane_boundaries_at(model, at_w)
    center = 0.5 * (left_u + right_u)
    offset = ground_u - center
    if ground_u < left_u:
        zone = LaneZone.LEFT_OF_LANE
    elif ground_u > right_u:
        zone = LaneZone.RIGHT_OF_LANE
    else:
        zone = LaneZone.IN_LANE
    return offset, zone
