"""Pinhole projection, ground-plane back-projection, IPM and object distance.

World frame convention: origin on the road surface directly below the
camera's optical center, u to the right, v down, w forward. The road is the
plane v = 0; camera height enters through the translation. A point is
projected through x = [phi_x*Xc + skew*Yc] / Zc + delta_x and
y = phi_y*Yc / Zc + delta_y with (Xc, Yc, Zc) = omega @ P + tau.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import (
    BehindCameraError,
    ConfigError,
    HorizonError,
    InvalidInputError,
    NotOnGroundError,
)
from .imagekit import ImageF32

_MIN_DEPTH = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    phi_x: float
    phi_y: float
    skew: float
    delta_x: float
    delta_y: float

    def __post_init__(self):
        if self.phi_x <= 0 or self.phi_y <= 0:
            raise InvalidInputError("focal lengths must be positive")


@dataclass(frozen=True)
class Extrinsics:
    omega: np.ndarray  # 3x3 rotation
    tau: np.ndarray  # translation, meters

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=np.float64).reshape(3, 3)
        tau = np.asarray(self.tau, dtype=np.float64).reshape(3)
        if not np.allclose(omega.T @ omega, np.eye(3), atol=1e-6):
            raise InvalidInputError("rotation matrix is not orthonormal")
        if abs(np.linalg.det(omega) - 1.0) > 1e-6:
            raise InvalidInputError("rotation matrix determinant must be +1")
        omega.flags.writeable = False
        tau.flags.writeable = False
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "tau", tau)


@dataclass(frozen=True)
class Calibration:
    intrinsics: Intrinsics
    extrinsics: Extrinsics
    image_width: int
    image_height: int

    def __post_init__(self):
        if self.image_width < 1 or self.image_height < 1:
            raise InvalidInputError("image dimensions must be positive")


@dataclass(frozen=True)
class WorldPoint:
    u: float  # lateral, right positive (m)
    v: float  # vertical, down positive (m)
    w: float  # forward (m)

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.u, self.v, self.w)):
            raise InvalidInputError("world point must be finite")


@dataclass(frozen=True)
class BevSpec:
    """Ground-plane raster layout for the bird's-eye view."""

    u_min: float
    u_max: float
    w_min: float
    w_max: float
    meters_per_pixel: float

    def __post_init__(self):
        if not self.u_max > self.u_min:
            raise InvalidInputError("u_max must exceed u_min")
        if not self.w_max > self.w_min > 0:
            raise InvalidInputError("need w_max > w_min > 0")
        if self.meters_per_pixel <= 0:
            raise InvalidInputError("meters_per_pixel must be positive")

    @property
    def cols(self) -> int:
        return max(1, int(math.ceil((self.u_max - self.u_min) / self.meters_per_pixel)))

    @property
    def rows(self) -> int:
        return max(1, int(math.ceil((self.w_max - self.w_min) / self.meters_per_pixel)))

    def ground_of_pixel(self, col, row):
        """(u, w) of a BEV pixel; row 0 is the far edge (w_max)."""
        u = self.u_min + np.asarray(col, dtype=np.float64) * self.meters_per_pixel
        w = self.w_max - np.asarray(row, dtype=np.float64) * self.meters_per_pixel
        return u, w

    def pixel_of_ground(self, u, w):
        """Fractional (col, row) of a ground point."""
        col = (np.asarray(u, dtype=np.float64) - self.u_min) / self.meters_per_pixel
        row = (self.w_max - np.asarray(w, dtype=np.float64)) / self.meters_per_pixel
        return col, row


def _project_arrays(u, v, w, calib: Calibration):
    """Vectorized pinhole projection; returns (x, y, depth)."""
    k = calib.intrinsics
    om = calib.extrinsics.omega
    tx, ty, tz = calib.extrinsics.tau
    xc = om[0, 0] * u + om[0, 1] * v + om[0, 2] * w + tx
    yc = om[1, 0] * u + om[1, 1] * v + om[1, 2] * w + ty
    zc = om[2, 0] * u + om[2, 1] * v + om[2, 2] * w + tz
    with np.errstate(divide="ignore", invalid="ignore"):
        x = (k.phi_x * xc + k.skew * yc) / zc + k.delta_x
        y = (k.phi_y * yc) / zc + k.delta_y
    return x, y, zc


def project_point(p: WorldPoint, calib: Calibration) -> tuple[float, float]:
    """Project a world point to pixel coordinates.

    Raises BehindCameraError unless the point has positive camera depth.
    """
    x, y, depth = _project_arrays(
        np.float64(p.u), np.float64(p.v), np.float64(p.w), calib
    )
    if depth <= _MIN_DEPTH:
        raise BehindCameraError(f"point depth {depth:.3g} is not in front of the camera")
    return float(x), float(y)


def backproject_ground(pixel: tuple[float, float], calib: Calibration) -> WorldPoint:
    """Invert the projection on the road plane v = 0.

    Solves the two linear equations obtained by fixing v = 0 for (u, w);
    raises HorizonError when the ray misses the ground in front of the camera.
    """
    x, y = float(pixel[0]), float(pixel[1])
    k = calib.intrinsics
    om = calib.extrinsics.omega
    tx, ty, tz = calib.extrinsics.tau

    xs = x - k.delta_x
    ys = y - k.delta_y
    a = np.array(
        [
            [xs * om[2, 0] - k.phi_x * om[0, 0] - k.skew * om[1, 0],
             xs * om[2, 2] - k.phi_x * om[0, 2] - k.skew * om[1, 2]],
            [ys * om[2, 0] - k.phi_y * om[1, 0],
             ys * om[2, 2] - k.phi_y * om[1, 2]],
        ],
        dtype=np.float64,
    )
    b = np.array(
        [k.phi_x * tx + k.skew * ty - xs * tz, k.phi_y * ty - ys * tz],
        dtype=np.float64,
    )
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    if abs(det) < 1e-12:
        raise HorizonError("pixel ray is parallel to the ground plane")
    u = (b[0] * a[1, 1] - a[0, 1] * b[1]) / det
    w = (a[0, 0] * b[1] - b[0] * a[1, 0]) / det

    depth = om[2, 0] * u + om[2, 2] * w + tz
    if w <= 0 or depth <= _MIN_DEPTH:
        raise HorizonError("pixel maps behind the camera or above the horizon")
    return WorldPoint(float(u), 0.0, float(w))


def backproject_ground_grid(xs: np.ndarray, ys: np.ndarray, calib: Calibration):
    """Vectorized ground back-projection of pixel arrays.

    Returns (u, w, valid); entries with no forward ground intersection are
    flagged invalid and hold NaN.
    """
    k = calib.intrinsics
    om = calib.extrinsics.omega
    tx, ty, tz = calib.extrinsics.tau
    xs = np.asarray(xs, dtype=np.float64) - k.delta_x
    ys = np.asarray(ys, dtype=np.float64) - k.delta_y

    a00 = xs * om[2, 0] - k.phi_x * om[0, 0] - k.skew * om[1, 0]
    a01 = xs * om[2, 2] - k.phi_x * om[0, 2] - k.skew * om[1, 2]
    a10 = ys * om[2, 0] - k.phi_y * om[1, 0]
    a11 = ys * om[2, 2] - k.phi_y * om[1, 2]
    b0 = k.phi_x * tx + k.skew * ty - xs * tz
    b1 = k.phi_y * ty - ys * tz

    det = a00 * a11 - a01 * a10
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (b0 * a11 - a01 * b1) / det
        w = (a00 * b1 - b0 * a10) / det
    depth = om[2, 0] * u + om[2, 2] * w + tz
    valid = (np.abs(det) > 1e-12) & (w > 0) & (depth > _MIN_DEPTH)
    u = np.where(valid, u, np.nan)
    w = np.where(valid, w, np.nan)
    return u, w, valid


def _bev_source_coords(calib: Calibration, bev: BevSpec, width: int, height: int):
    """Source pixel coordinates of every BEV cell plus an in-bounds mask."""
    rows = np.arange(bev.rows, dtype=np.float64)
    cols = np.arange(bev.cols, dtype=np.float64)
    grid_c, grid_r = np.meshgrid(cols, rows)
    u, w = bev.ground_of_pixel(grid_c, grid_r)
    x, y, depth = _project_arrays(u, np.zeros_like(u), w, calib)
    inside = (
        (depth > _MIN_DEPTH)
        & (x >= 0.0)
        & (x <= width - 1.0)
        & (y >= 0.0)
        & (y <= height - 1.0)
    )
    return x, y, inside


def bev_visibility_mask(calib: Calibration, bev: BevSpec) -> np.ndarray:
    """Boolean BEV raster: True where the ground cell is seen by the camera."""
    _, _, inside = _bev_source_coords(calib, bev, calib.image_width, calib.image_height)
    return inside


def inverse_perspective_map(img: ImageF32, calib: Calibration, bev: BevSpec) -> ImageF32:
    """Resample a camera image onto the ground plane (bird's-eye view).

    Output pixel (col, row) covers ground point
    (u_min + col*mpp, 0, w_max - row*mpp); ground cells whose projection
    falls outside the source image are 0.
    """
    if img.channels != 1:
        raise InvalidInputError("inverse_perspective_map expects a single-channel image")
    x, y, inside = _bev_source_coords(calib, bev, img.width, img.height)
    sample_x = np.where(inside, x, 0.0)
    sample_y = np.where(inside, y, 0.0)
    values = ndimage.map_coordinates(
        img.pixels.astype(np.float64), [sample_y, sample_x], order=1, mode="nearest"
    )
    return ImageF32(np.where(inside, values, 0.0))


def distance_to_object(
    bbox: tuple[float, float, float, float],
    calib: Calibration,
    class_offset: float = 0.0,
) -> float:
    """Forward ground distance of a detection's foot point, plus class offset.

    The bottom-center of the box is assumed to touch the road; the result is
    clamped to be nonnegative.
    """
    x, y, bw, bh = (float(c) for c in bbox)
    if bw <= 0 or bh <= 0:
        raise InvalidInputError("bounding box must have positive size")
    foot = (x + bw / 2.0, y + bh)
    try:
        ground = backproject_ground(foot, calib)
    except HorizonError as exc:
        raise NotOnGroundError(f"foot point {foot} does not meet the road") from exc
    return max(ground.w + class_offset, 0.0)


def object_ground_point(
    bbox: tuple[float, float, float, float], calib: Calibration
) -> WorldPoint:
    """Ground point under a detection's bottom-center pixel."""
    x, y, bw, bh = (float(c) for c in bbox)
    try:
        return backproject_ground((x + bw / 2.0, y + bh), calib)
    except HorizonError as exc:
        raise NotOnGroundError("foot point does not meet the road") from exc


def load_calibration(path) -> Calibration:
    """Parse the key = value calibration file.

    Keys: phi_x, phi_y, skew, delta_x, delta_y, omega (9 row-major values),
    tau (3 values), image_width, image_height. '#' starts a comment.
    """
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {line_no}: expected 'key = value'")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()

    required = {
        "phi_x", "phi_y", "skew", "delta_x", "delta_y",
        "omega", "tau", "image_width", "image_height",
    }
    missing = required - values.keys()
    if missing:
        raise ConfigError(f"{path}: missing calibration keys {sorted(missing)}")

    try:
        omega = np.array([float(t) for t in values["omega"].split()], dtype=np.float64)
        tau = np.array([float(t) for t in values["tau"].split()], dtype=np.float64)
        if omega.size != 9:
            raise ConfigError(f"{path}: omega needs 9 values, got {omega.size}")
        if tau.size != 3:
            raise ConfigError(f"{path}: tau needs 3 values, got {tau.size}")
        intr = Intrinsics(
            phi_x=float(values["phi_x"]),
            phi_y=float(values["phi_y"]),
            skew=float(values["skew"]),
            delta_x=float(values["delta_x"]),
            delta_y=float(values["delta_y"]),
        )
        extr = Extrinsics(omega.reshape(3, 3), tau)
        return Calibration(
            intrinsics=intr,
            extrinsics=extr,
            image_width=int(values["image_width"]),
            image_height=int(values["image_height"]),
        )
    except ConfigError:
        raise
    except (ValueError, InvalidInputError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
