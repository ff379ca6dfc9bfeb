"""Image primitives shared by every stage of the pipeline.

Float32 buffers, grayscale and CIELAB conversion, 2D filtering, steerable
Gaussian-derivative filters and Gaussian image pyramids. All filtering uses
edge replication at the borders so results are reproducible across modules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError

# sRGB -> XYZ (D65) matrix and reference white.
_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ],
    dtype=np.float64,
)
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883], dtype=np.float64)

GRAY_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class ImageF32:
    """An immutable float32 raster.

    pixels has shape (height, width) for single-channel images and
    (height, width, 3) for color. Intensity channels live in [0, 1];
    Lab channels keep their native ranges.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim == 2:
            pass
        elif px.ndim == 3 and px.shape[2] == 3:
            pass
        else:
            raise InvalidInputError(f"image must be (h, w) or (h, w, 3), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidInputError("image dimensions must be at least 1x1")
        px = np.ascontiguousarray(px)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else self.pixels.shape[2]


@dataclass(frozen=True)
class Pyramid:
    """Multi-scale stack of images, level 0 finest."""

    levels: tuple[ImageF32, ...]
    downscale_factor: float = field(default=0.5)

    def __post_init__(self):
        if len(self.levels) < 1:
            raise InvalidInputError("pyramid needs at least one level")
        if not 0.0 < self.downscale_factor < 1.0:
            raise InvalidInputError("downscale_factor must be in (0, 1)")
        object.__setattr__(self, "levels", tuple(self.levels))


def to_grayscale(img: ImageF32) -> ImageF32:
    """Collapse an RGB image to luminance (0.299 R + 0.587 G + 0.114 B)."""
    if img.channels != 3:
        raise InvalidInputError("to_grayscale expects a 3-channel image")
    w = np.asarray(GRAY_WEIGHTS, dtype=np.float32)
    return ImageF32(img.pixels @ w)


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    lo = c <= 0.04045
    out = np.empty_like(c)
    out[lo] = c[lo] / 12.92
    out[~lo] = ((c[~lo] + 0.055) / 1.055) ** 2.4
    return out


def rgb_to_lab(img: ImageF32) -> ImageF32:
    """Convert sRGB (D65, values in [0,1]) to CIELAB.

    L* spans [0, 100]; a* and b* are roughly in [-128, 127].
    """
    if img.channels != 3:
        raise InvalidInputError("rgb_to_lab expects a 3-channel image")
    rgb = np.clip(img.pixels.astype(np.float64), 0.0, 1.0)
    xyz = _srgb_to_linear(rgb) @ _SRGB_TO_XYZ.T
    t = xyz / _WHITE_D65

    delta = 6.0 / 29.0
    cube = t > delta**3
    f = np.where(cube, np.cbrt(np.maximum(t, 0.0)), t / (3.0 * delta * delta) + 4.0 / 29.0)

    lab = np.empty_like(rgb)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return ImageF32(lab)


def convolve2d(img: ImageF32, kernel: np.ndarray) -> ImageF32:
    """Apply an odd-sized 2D kernel as a sliding dot product, replicate border.

    out(y, x) = sum_{dy,dx} kernel(dy, dx) * img(y + dy - ry, x + dx - rx)
    """
    if img.channels != 1:
        raise InvalidInputError("convolve2d expects a single-channel image")
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
        raise InvalidInputError(f"kernel dimensions must be odd, got {k.shape}")
    out = ndimage.correlate(img.pixels.astype(np.float64), k, mode="nearest")
    return ImageF32(out)


def _gauss_1d(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _gauss_deriv_1d(sigma: float, order: int, radius: int) -> np.ndarray:
    """Sampled n-th Gaussian derivative, DC-corrected so constants map to 0."""
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    t = x / sigma
    g = np.exp(-(t * t) / 2.0)
    g = g / g.sum()
    if order == 0:
        return g
    if order == 1:
        h = -t / sigma
    elif order == 2:
        h = (t * t - 1.0) / sigma**2
    elif order == 3:
        h = (-(t**3) + 3.0 * t) / sigma**3
    elif order == 4:
        h = (t**4 - 6.0 * t * t + 3.0) / sigma**4
    else:
        raise InvalidInputError(f"unsupported derivative order {order}")
    k = g * h
    return k - k.sum() / k.size


def _separable_response(img: np.ndarray, kx: np.ndarray, ky: np.ndarray) -> np.ndarray:
    tmp = ndimage.correlate1d(img, ky, axis=0, mode="nearest")
    return ndimage.correlate1d(tmp, kx, axis=1, mode="nearest")


def steerable_filter_response(
    img: ImageF32, order: int, orientation: float, sigma: float = 2.0
) -> ImageF32:
    """Directional Gaussian-derivative response steered to ``orientation``.

    The order-n response is the n-th directional derivative along the given
    angle (0 = +x axis), built from the n+1 separable basis kernels
    d^a/dx^a d^b/dy^b G with a+b = n and binomial steering coefficients.
    Ridge-like bright lines perpendicular to the orientation respond
    strongest; even orders make theta and theta+pi equivalent.
    """
    if img.channels != 1:
        raise InvalidInputError("steerable_filter_response expects a single-channel image")
    if order not in (2, 4):
        raise InvalidInputError(f"unsupported steerable order {order}, expected 2 or 4")
    if sigma <= 0:
        raise InvalidInputError("sigma must be positive")

    radius = max(1, int(math.ceil(4.0 * sigma)))
    c, s = math.cos(orientation), math.sin(orientation)
    data = img.pixels.astype(np.float64)

    out = np.zeros_like(data)
    for b in range(order + 1):
        a = order - b
        coeff = math.comb(order, b) * (c**a) * (s**b)
        if abs(coeff) < 1e-15:
            continue
        kx = _gauss_deriv_1d(sigma, a, radius)
        ky = _gauss_deriv_1d(sigma, b, radius)
        out += coeff * _separable_response(data, kx, ky)
    return ImageF32(out)


def resize_bilinear(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample a 2D array to (out_h, out_w), pixel-center aligned, edge clamped."""
    in_h, in_w = data.shape
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (in_w / out_w) - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(
        data.astype(np.float64), [grid_y, grid_x], order=1, mode="nearest"
    )


def pyramid_level_dims(width: int, height: int, levels: int, factor: float) -> list[tuple[int, int]]:
    """(width, height) of each level under the ceil rule."""
    dims = [(width, height)]
    for _ in range(levels - 1):
        w, h = dims[-1]
        dims.append((int(math.ceil(w * factor)), int(math.ceil(h * factor))))
    return dims


def build_pyramid(img: ImageF32, levels: int, downscale_factor: float) -> Pyramid:
    """Gaussian blur + bilinear downsample per level; coarsest stays >= 16x16."""
    if levels < 1:
        raise InvalidInputError("levels must be >= 1")
    if not 0.0 < downscale_factor < 1.0:
        raise InvalidInputError("downscale_factor must be in (0, 1)")
    if img.channels != 1:
        raise InvalidInputError("build_pyramid expects a single-channel image")

    dims = pyramid_level_dims(img.width, img.height, levels, downscale_factor)
    cw, ch = dims[-1]
    if cw < 16 or ch < 16:
        raise InvalidInputError(
            f"coarsest level would be {cw}x{ch}, below the 16x16 minimum"
        )

    # Anti-alias prior to decimation; ~0.87 px for a factor of 0.5.
    sigma = 0.5 * math.sqrt(max(1.0 / downscale_factor**2 - 1.0, 0.0))
    out = [img]
    current = img.pixels.astype(np.float64)
    for w, h in dims[1:]:
        blurred = ndimage.gaussian_filter(current, sigma, mode="nearest") if sigma > 0.05 else current
        current = resize_bilinear(blurred, h, w)
        out.append(ImageF32(current))
    return Pyramid(tuple(out), downscale_factor)
