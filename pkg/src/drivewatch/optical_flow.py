"""Dense robust optical flow between two consecutive frames.

The flow (u, v) minimizes a robust brightness-constancy energy

    E(u, v) = sum_ij rho(I1(i,j) - I2(i + u_ij, j + v_ij))
            + lambda * sum_ij [rho(u_ij - u_i+1,j) + rho(u_ij - u_i,j+1)
                               + rho(v_ij - v_i+1,j) + rho(v_ij - v_i,j+1)]

with the shifted Charbonnier penalty rho(z) = sqrt(z^2 + eps^2) - eps on both
the data and smoothness terms, i is the horizontal pixel coordinate and j the
vertical one. Only in-bounds neighbor pairs contribute to the smoothness sum.

Minimization is coarse-to-fine: per pyramid level the second frame is warped
by the current flow, the data term is linearized, and the flow is refined by
iterated reweighted least squares: first an exact step over the global
translation mode, then red-black relaxation sweeps for the local structure,
then an optional median filter on u and v. Flow is upscaled bilinearly
between levels with values rescaled by 1/downscale_factor.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

from .errors import EmptyRegionError, InvalidInputError
from .imagekit import ImageF32, build_pyramid, pyramid_level_dims, resize_bilinear

_MIN_SIDE = 32
_COARSEST_MIN = 16

FLOW_MAGIC = b"RFLO"
_HEADER = struct.Struct("<4sHHI")


@dataclass(frozen=True)
class FlowParams:
    """Solver configuration; the defaults suit images with values in [0, 1]."""

    smoothness_lambda: float = 10.0
    penalty_epsilon: float = 1e-3
    pyramid_levels: int = 4
    downscale_factor: float = 0.5
    warps_per_level: int = 3
    solver_iterations_per_warp: int = 30
    median_filter_radius: int = 2

    def __post_init__(self):
        if self.smoothness_lambda <= 0:
            raise InvalidInputError("smoothness_lambda must be positive")
        if self.penalty_epsilon <= 0:
            raise InvalidInputError("penalty_epsilon must be positive")
        if self.pyramid_levels < 1:
            raise InvalidInputError("pyramid_levels must be >= 1")
        if not 0.0 < self.downscale_factor < 1.0:
            raise InvalidInputError("downscale_factor must be in (0, 1)")
        if self.warps_per_level < 1 or self.solver_iterations_per_warp < 1:
            raise InvalidInputError("warps and solver iterations must be >= 1")
        if self.median_filter_radius < 0:
            raise InvalidInputError("median_filter_radius must be >= 0")


@dataclass(frozen=True)
class FlowField:
    """Per-pixel velocities in px/frame; u horizontal, v vertical."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.ascontiguousarray(np.asarray(self.u, dtype=np.float32))
        v = np.ascontiguousarray(np.asarray(self.v, dtype=np.float32))
        if u.ndim != 2 or u.shape != v.shape:
            raise InvalidInputError("u and v must be 2D arrays of equal shape")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise InvalidInputError("flow values must be finite")
        u.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]


@dataclass(frozen=True)
class FlowStats:
    mean_u: float
    mean_v: float
    std_u: float
    std_v: float
    pixel_count: int


def _charbonnier(z: np.ndarray, eps: float) -> np.ndarray:
    return np.sqrt(z * z + eps * eps) - eps


def _warp(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample img at (x + u, y + v), bilinear, replicate border."""
    h, w = img.shape
    gy, gx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return ndimage.map_coordinates(img, [gy + v, gx + u], order=1, mode="nearest")


def flow_energy(I1: ImageF32, I2: ImageF32, flow: FlowField, params: FlowParams) -> float:
    """Evaluate the robust flow energy for a given field."""
    if I1.channels != 1 or I2.channels != 1:
        raise InvalidInputError("flow_energy expects single-channel images")
    if (I1.height, I1.width) != (I2.height, I2.width):
        raise InvalidInputError("frame dimensions differ")
    if (flow.height, flow.width) != (I1.height, I1.width):
        raise InvalidInputError("flow dimensions differ from the frames")

    a1 = I1.pixels.astype(np.float64)
    a2 = I2.pixels.astype(np.float64)
    u = flow.u.astype(np.float64)
    v = flow.v.astype(np.float64)
    eps = params.penalty_epsilon

    warped = _warp(a2, u, v)
    energy = _charbonnier(a1 - warped, eps).sum()
    for comp in (u, v):
        energy += params.smoothness_lambda * _charbonnier(comp[:, :-1] - comp[:, 1:], eps).sum()
        energy += params.smoothness_lambda * _charbonnier(comp[:-1, :] - comp[1:, :], eps).sum()
    return float(energy)


def _central_gradient(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    kx = np.array([-0.5, 0.0, 0.5])
    gx = ndimage.correlate1d(img, kx, axis=1, mode="nearest")
    gy = ndimage.correlate1d(img, kx, axis=0, mode="nearest")
    return gx, gy


def _linearized_energy(cdata, Ix, Iy, U, V, u0, v0, lam, eps) -> float:
    """Robust energy of the linearized data term plus smoothness on (U, V)."""
    r = cdata + Ix * (U - u0) + Iy * (V - v0)
    energy = _charbonnier(r, eps).sum()
    for comp in (U, V):
        energy += lam * _charbonnier(comp[:, :-1] - comp[:, 1:], eps).sum()
        energy += lam * _charbonnier(comp[:-1, :] - comp[1:, :], eps).sum()
    return float(energy)


def _global_translation_step(U, V, u0, v0, cdata, Ix, Iy, eps, iters=10):
    """Exact coordinate descent over uniform shifts of (U, V), in place.

    A constant shift leaves every smoothness difference unchanged, so only
    the linearized data term matters; pointwise relaxation alone moves this
    zero-stiffness mode far too slowly when the smoothness weights are stiff.
    Each IRLS step here minimizes the data majorizer over the shift exactly
    and therefore never increases the linearized energy.
    """
    r0 = cdata + Ix * (U - u0) + Iy * (V - v0)
    s = 0.0
    t = 0.0
    for _ in range(iters):
        r = r0 + Ix * s + Iy * t
        wdata = 1.0 / np.sqrt(r * r + eps * eps)
        a11 = float((wdata * Ix * Ix).sum())
        a12 = float((wdata * Ix * Iy).sum())
        a22 = float((wdata * Iy * Iy).sum())
        b1 = -float((wdata * Ix * r0).sum())
        b2 = -float((wdata * Iy * r0).sum())
        det = a11 * a22 - a12 * a12
        if det < 1e-12:
            break
        s = (a22 * b1 - a12 * b2) / det
        t = (a11 * b2 - a12 * b1) / det
    U += s
    V += t


@numba.njit(cache=True)
def _half_sweep(U, V, u0, v0, cdata, Ix, Iy, lam, eps, parity):
    """Exact per-pixel 2x2 solves for one checkerboard color, in place.

    IRLS weights are rebuilt at the current iterate; same-color pixels share
    no smoothness edge, so the pass is a block of independent exact
    coordinate minimizations and never increases the linearized energy.
    """
    h, w = U.shape
    eps2 = eps * eps
    for y in range(h):
        for x in range((parity + y) & 1, w, 2):
            ix = Ix[y, x]
            iy = Iy[y, x]
            r = cdata[y, x] + ix * (U[y, x] - u0[y, x]) + iy * (V[y, x] - v0[y, x])
            wd = 1.0 / np.sqrt(r * r + eps2)

            su = 0.0
            nu = 0.0
            sv = 0.0
            nv = 0.0
            uc = U[y, x]
            vc = V[y, x]
            if x + 1 < w:
                wu = 1.0 / np.sqrt((uc - U[y, x + 1]) ** 2 + eps2)
                su += wu
                nu += wu * U[y, x + 1]
                wv = 1.0 / np.sqrt((vc - V[y, x + 1]) ** 2 + eps2)
                sv += wv
                nv += wv * V[y, x + 1]
            if x > 0:
                wu = 1.0 / np.sqrt((uc - U[y, x - 1]) ** 2 + eps2)
                su += wu
                nu += wu * U[y, x - 1]
                wv = 1.0 / np.sqrt((vc - V[y, x - 1]) ** 2 + eps2)
                sv += wv
                nv += wv * V[y, x - 1]
            if y + 1 < h:
                wu = 1.0 / np.sqrt((uc - U[y + 1, x]) ** 2 + eps2)
                su += wu
                nu += wu * U[y + 1, x]
                wv = 1.0 / np.sqrt((vc - V[y + 1, x]) ** 2 + eps2)
                sv += wv
                nv += wv * V[y + 1, x]
            if y > 0:
                wu = 1.0 / np.sqrt((uc - U[y - 1, x]) ** 2 + eps2)
                su += wu
                nu += wu * U[y - 1, x]
                wv = 1.0 / np.sqrt((vc - V[y - 1, x]) ** 2 + eps2)
                sv += wv
                nv += wv * V[y - 1, x]

            c0 = cdata[y, x] - ix * u0[y, x] - iy * v0[y, x]
            a11 = wd * ix * ix + lam * su
            a12 = wd * ix * iy
            a22 = wd * iy * iy + lam * sv
            b1 = lam * nu - wd * ix * c0
            b2 = lam * nv - wd * iy * c0
            det = a11 * a22 - a12 * a12
            U[y, x] = (a22 * b1 - a12 * b2) / det
            V[y, x] = (a11 * b2 - a12 * b1) / det


def _irls_sweep(U, V, u0, v0, cdata, Ix, Iy, lam, eps):
    """One full red-black IRLS sweep over both checkerboard colors."""
    _half_sweep(U, V, u0, v0, cdata, Ix, Iy, lam, eps, 0)
    _half_sweep(U, V, u0, v0, cdata, Ix, Iy, lam, eps, 1)


def _max_levels(width: int, height: int, requested: int, factor: float) -> int:
    levels = 1
    while levels < requested:
        dims = pyramid_level_dims(width, height, levels + 1, factor)
        w, h = dims[-1]
        if w < _COARSEST_MIN or h < _COARSEST_MIN:
            break
        levels += 1
    return levels


def estimate_flow(
    I1: ImageF32,
    I2: ImageF32,
    params: FlowParams,
    trace: list | None = None,
) -> FlowField:
    """Coarse-to-fine estimate of the flow carrying I1 onto I2.

    If ``trace`` is a list, the full-objective energy at the finest pyramid
    level is appended on entering the level and after each warp.
    """
    if I1.channels != 1 or I2.channels != 1:
        raise InvalidInputError("estimate_flow expects single-channel images")
    if (I1.height, I1.width) != (I2.height, I2.width):
        raise InvalidInputError("frame dimensions differ")
    if I1.width < _MIN_SIDE or I1.height < _MIN_SIDE:
        raise InvalidInputError(f"frames must be at least {_MIN_SIDE}x{_MIN_SIDE}")

    levels = _max_levels(I1.width, I1.height, params.pyramid_levels, params.downscale_factor)
    pyr1 = build_pyramid(I1, levels, params.downscale_factor)
    pyr2 = build_pyramid(I2, levels, params.downscale_factor)

    lam = params.smoothness_lambda
    eps = params.penalty_epsilon
    median_size = 2 * params.median_filter_radius + 1

    U = np.zeros((pyr1.levels[-1].height, pyr1.levels[-1].width), dtype=np.float64)
    V = np.zeros_like(U)

    for level in range(levels - 1, -1, -1):
        a1 = pyr1.levels[level].pixels.astype(np.float64)
        a2 = pyr2.levels[level].pixels.astype(np.float64)
        h, w = a1.shape
        if U.shape != (h, w):
            scale = 1.0 / params.downscale_factor
            U = resize_bilinear(U, h, w) * scale
            V = resize_bilinear(V, h, w) * scale

        if trace is not None and level == 0:
            trace.append(flow_energy(I1, I2, FlowField(U, V), params))

        g1x, g1y = _central_gradient(a1)
        for _ in range(params.warps_per_level):
            warped = _warp(a2, U, V)
            g2x, g2y = _central_gradient(warped)
            Ix = 0.5 * (g1x + g2x)
            Iy = 0.5 * (g1y + g2y)
            cdata = warped - a1
            u0 = U.copy()
            v0 = V.copy()
            _global_translation_step(U, V, u0, v0, cdata, Ix, Iy, eps)
            for _ in range(params.solver_iterations_per_warp):
                _irls_sweep(U, V, u0, v0, cdata, Ix, Iy, lam, eps)
            if params.median_filter_radius > 0:
                U = ndimage.median_filter(U, size=median_size, mode="nearest")
                V = ndimage.median_filter(V, size=median_size, mode="nearest")
            if trace is not None and level == 0:
                trace.append(flow_energy(I1, I2, FlowField(U, V), params))

    return FlowField(U, V)


def region_flow_stats(flow: FlowField, region: tuple[float, float, float, float]) -> FlowStats:
    """Mean and population std of u, v over the region's pixels.

    ``region`` is (x, y, width, height); partially covered pixels count.
    """
    x, y, w, h = (float(c) for c in region)
    if w <= 0 or h <= 0:
        raise EmptyRegionError("region has no area")
    x0 = max(int(np.floor(x)), 0)
    y0 = max(int(np.floor(y)), 0)
    x1 = min(int(np.ceil(x + w)), flow.width)
    y1 = min(int(np.ceil(y + h)), flow.height)
    if x0 >= x1 or y0 >= y1:
        raise EmptyRegionError("region does not intersect the flow field")
    u = flow.u[y0:y1, x0:x1].astype(np.float64)
    v = flow.v[y0:y1, x0:x1].astype(np.float64)
    return FlowStats(
        mean_u=float(u.mean()),
        mean_v=float(v.mean()),
        std_u=float(u.std()),
        std_v=float(v.std()),
        pixel_count=int(u.size),
    )


def write_flow(path, flow: FlowField) -> None:
    """Dump a flow field: 12-byte header then the u and v float32 LE planes."""
    if flow.width > 0xFFFF or flow.height > 0xFFFF:
        raise InvalidInputError("flow dimensions exceed the dump format's u16 range")
    header = _HEADER.pack(FLOW_MAGIC, flow.width, flow.height, 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(flow.u.astype("<f4").tobytes())
        fh.write(flow.v.astype("<f4").tobytes())


def read_flow(path) -> FlowField:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise InvalidInputError("flow dump too short")
    magic, width, height, _ = _HEADER.unpack_from(data)
    if magic != FLOW_MAGIC:
        raise InvalidInputError(f"bad flow magic {magic!r}")
    count = width * height
    expected = _HEADER.size + 2 * 4 * count
    if len(data) != expected:
        raise InvalidInputError(f"flow dump has {len(data)} bytes, expected {expected}")
    planes = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    u = planes[:count].reshape(height, width)
    v = planes[count:].reshape(height, width)
    return FlowField(u, v)
