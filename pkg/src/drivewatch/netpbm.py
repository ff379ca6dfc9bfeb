"""Binary Netpbm codec: 8-bit P5 (PGM) and P6 (PPM), maxval 255.

Decoding maps samples to [0, 1] float32; encoding clamps and rounds back.
Header comments (# to end of line) are honored anywhere between tokens.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .imagekit import ImageF32


def _read_tokens(data: bytes, count: int, start: int) -> tuple[list[bytes], int]:
    """Read whitespace-separated header tokens, skipping # comments."""
    tokens = []
    i = start
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i] == ord("#"):
            while i < n and data[i] != ord("\n"):
                i += 1
            continue
        if i >= n:
            raise InvalidInputError("truncated netpbm header")
        j = i
        while j < n and not data[j : j + 1].isspace() and data[j] != ord("#"):
            j += 1
        tokens.append(data[i:j])
        i = j
    return tokens, i


def decode(data: bytes) -> ImageF32:
    """Decode a P5/P6 byte string into an ImageF32."""
    if len(data) < 2:
        raise InvalidInputError("not a netpbm file")
    magic = data[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise InvalidInputError(f"unsupported netpbm magic {magic!r}, expected P5 or P6")

    tokens, pos = _read_tokens(data, 3, 2)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise InvalidInputError(f"bad netpbm header fields {tokens!r}") from exc
    if width < 1 or height < 1:
        raise InvalidInputError(f"bad netpbm dimensions {width}x{height}")
    if maxval != 255:
        raise InvalidInputError(f"only maxval 255 is supported, got {maxval}")

    # Exactly one whitespace byte separates the header from the raster.
    pos += 1
    expected = width * height * channels
    raster = data[pos : pos + expected]
    if len(raster) != expected:
        raise InvalidInputError(
            f"raster has {len(raster)} bytes, expected {expected}"
        )
    arr = np.frombuffer(raster, dtype=np.uint8).astype(np.float32) / 255.0
    if channels == 1:
        return ImageF32(arr.reshape(height, width))
    return ImageF32(arr.reshape(height, width, 3))


def encode(img: ImageF32) -> bytes:
    """Encode to P5 (single channel) or P6 (3 channels), maxval 255."""
    quantized = np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)
    magic = b"P5" if img.channels == 1 else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    return header + quantized.tobytes()


def read_image(path) -> ImageF32:
    with open(path, "rb") as fh:
        return decode(fh.read())


def write_image(path, img: ImageF32) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(img))
