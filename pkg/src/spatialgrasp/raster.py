"""Image and depth rasters with bit-exact PPM (P6) and PFM (Pf) file I/O.

Pixels live in float [0, 1] internally; quantization to 8 bits only happens
at the file boundary. Depth is metric (meters) with NaN marking invalid cells.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, UsageError

_WHITESPACE = b" \t\n\r\v\f"


@dataclass(frozen=True, eq=False)
class Image:
    """RGB image, ``pixels`` shaped (height, width, 3), values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise UsageError(f"image must be shaped (H, W, 3), got {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise UsageError("image pixels must be finite and within [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def clamped(cls, pixels: np.ndarray) -> Image:
        return cls(np.clip(pixels, 0.0, 1.0))

    def same_as(self, other: Image) -> bool:
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Metric depth, ``values`` shaped (height, width); NaN = invalid."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise UsageError(f"depth map must be 2-D, got shape {v.shape}")
        valid = v[~np.isnan(v)]
        if not np.all(np.isfinite(valid)) or np.any(valid <= 0.0):
            raise UsageError("depth values must be NaN or finite and strictly positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def scaled(self, factor: float) -> DepthMap:
        if not factor > 0 or not np.isfinite(factor):
            raise UsageError(f"depth scale must be positive and finite, got {factor}")
        return DepthMap(self.values * factor)


# -- header parsing -----------------------------------------------------------

def _read_token(data: bytes, pos: int, *, comments: bool) -> tuple[bytes, int]:
    """Skip whitespace (and '#' comments for PNM) and return the next token."""
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c in _WHITESPACE and c:
            pos += 1
        elif comments and c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos:pos + 1] not in _WHITESPACE:
        pos += 1
    if start == pos:
        raise FormatError("truncated header", start)
    return data[start:pos], pos


def _parse_int(token: bytes, offset: int, what: str) -> int:
    if not token.isdigit():
        raise FormatError(f"invalid {what} {token!r}", offset)
    value = int(token)
    if value <= 0:
        raise FormatError(f"{what} must be positive, got {value}", offset)
    return value


def _ppm_header(data: bytes) -> tuple[int, int, int]:
    """Return (width, height, payload offset) of a P6 file held in ``data``."""
    if data[:2] != b"P6":
        raise FormatError(f"bad magic number {data[:2]!r}, expected 'P6'", 0)
    pos = 2
    fields = []
    for what in ("width", "height", "maxval"):
        start = pos
        token, pos = _read_token(data, pos, comments=True)
        fields.append(_parse_int(token, start, what))
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"maxval must be 255, got {maxval}", pos)
    if pos >= len(data) or data[pos:pos + 1] not in _WHITESPACE:
        raise FormatError("missing whitespace after maxval", pos)
    return width, height, pos + 1


def image_size(path: str | os.PathLike) -> tuple[int, int]:
    """(width, height) read from a PPM header without decoding the payload."""
    with open(path, "rb") as f:
        head = f.read(512)
    width, height, _ = _ppm_header(head)
    return width, height


def load_image(path: str | os.PathLike) -> Image:
    with open(path, "rb") as f:
        data = f.read()
    width, height, start = _ppm_header(data)
    need = width * height * 3
    have = len(data) - start
    if have < need:
        raise FormatError(f"truncated payload: expected {need} bytes, found {have}", len(data))
    raw = np.frombuffer(data, dtype=np.uint8, count=need, offset=start)
    return Image(raw.reshape(height, width, 3).astype(np.float64) / 255.0)


def quantize(image: Image) -> np.ndarray:
    """8-bit codes used on disk: round-half-even of v*255, clamped."""
    return np.clip(np.rint(image.pixels * 255.0), 0, 255).astype(np.uint8)


def save_image(image: Image, path: str | os.PathLike) -> None:
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(quantize(image).tobytes())


def _pfm_header(data: bytes) -> tuple[int, int, bool, int]:
    if data[:2] == b"PF":
        raise FormatError("color PFM ('PF') is not a depth map, expected 'Pf'", 0)
    if data[:2] != b"Pf":
        raise FormatError(f"bad magic number {data[:2]!r}, expected 'Pf'", 0)
    pos = 2
    start = pos
    token, pos = _read_token(data, pos, comments=False)
    width = _parse_int(token, start, "width")
    start = pos
    token, pos = _read_token(data, pos, comments=False)
    height = _parse_int(token, start, "height")
    start = pos
    token, pos = _read_token(data, pos, comments=False)
    try:
        scale = float(token)
    except ValueError:
        raise FormatError(f"invalid scale {token!r}", start) from None
    if scale == 0.0 or not np.isfinite(scale):
        raise FormatError(f"invalid scale {scale}", start)
    if pos >= len(data) or data[pos:pos + 1] not in _WHITESPACE:
        raise FormatError("missing whitespace after scale", pos)
    return width, height, scale < 0, pos + 1


def load_depth(path: str | os.PathLike) -> DepthMap:
    with open(path, "rb") as f:
        data = f.read()
    width, height, little, start = _pfm_header(data)
    need = width * height * 4
    have = len(data) - start
    if have < need:
        raise FormatError(f"truncated payload: expected {need} bytes, found {have}", len(data))
    dtype = np.dtype("<f4" if little else ">f4")
    raw = np.frombuffer(data, dtype=dtype, count=width * height, offset=start)
    values = raw.reshape(height, width)[::-1].astype(np.float64)
    bad = ~np.isnan(values) & (~np.isfinite(values) | (values <= 0.0))
    if np.any(bad):
        row, col = np.argwhere(bad)[0]
        file_row = height - 1 - row
        offset = start + 4 * (file_row * width + col)
        raise FormatError(f"depth value {values[row, col]!r} is not positive and finite", int(offset))
    return DepthMap(values)


def save_depth(depth: DepthMap, path: str | os.PathLike) -> None:
    header = f"Pf\n{depth.width} {depth.height}\n-1.0\n".encode("ascii")
    payload = depth.values[::-1].astype("<f4")
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload.tobytes())
