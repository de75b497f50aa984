"""Pixel rasters, summed-area tables and PGM/PPM file I/O.

Gray images are ``uint8`` arrays of shape ``(height, width)``; color images
are ``uint8`` arrays of shape ``(height, width, 3)`` in RGB order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np


class ImageFormatError(ValueError):
    """Base class for PGM/PPM parse failures."""


class UnsupportedFormatError(ImageFormatError):
    pass


class MalformedHeaderError(ImageFormatError):
    pass


class UnsupportedMaxvalError(ImageFormatError):
    pass


class TruncatedPayloadError(ImageFormatError):
    pass


class Rect(NamedTuple):
    x: int
    y: int
    w: int
    h: int

    @property
    def area(self) -> int:
        return self.w * self.h


def round_half_up(v):
    """Round to nearest integer, halves away from -inf (deterministic, unlike ``round``)."""
    return np.floor(np.asarray(v, dtype=np.float64) + 0.5).astype(np.int64)


def as_gray(img) -> np.ndarray:
    """Validate and return ``img`` as a 2-D uint8 array."""
    a = np.asarray(img)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D gray image, got shape {a.shape}")
    if a.dtype != np.uint8:
        if a.size and (a.min() < 0 or a.max() > 255):
            raise ValueError("gray intensities must lie in [0, 255]")
        a = a.astype(np.uint8)
    return a


def to_grayscale(img) -> np.ndarray:
    """Integer Rec.601 luma: ``round((299 R + 587 G + 114 B) / 1000)``.

    Gray input is returned unchanged.
    """
    a = np.asarray(img)
    if a.ndim == 2:
        return as_gray(a)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"expected an RGB image of shape (h, w, 3), got {a.shape}")
    c = a.astype(np.int64)
    num = 299 * c[..., 0] + 587 * c[..., 1] + 114 * c[..., 2]
    # round-half-up in integer arithmetic
    luma = (num + 500) // 1000
    return np.clip(luma, 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class IntegralImage:
    """Zero-padded summed-area table, shape ``(height + 1, width + 1)``.

    ``sums[y, x]`` is the sum of all pixels with row < y and column < x.
    ``squares`` holds the same for squared intensities when requested.
    """

    sums: np.ndarray
    squares: np.ndarray | None = None

    @property
    def width(self) -> int:
        return self.sums.shape[1] - 1

    @property
    def height(self) -> int:
        return self.sums.shape[0] - 1


def _summed_area(a: np.ndarray) -> np.ndarray:
    h, w = a.shape
    out = np.zeros((h + 1, w + 1), dtype=np.int64)
    np.cumsum(np.cumsum(a, axis=0, dtype=np.int64), axis=1, out=out[1:, 1:])
    return out


def integral(img, with_squares: bool = False) -> IntegralImage:
    a = as_gray(img).astype(np.int64)
    sq = _summed_area(a * a) if with_squares else None
    return IntegralImage(_summed_area(a), sq)


def rect_sum(ii: IntegralImage, r: Rect, table: np.ndarray | None = None) -> int:
    """Sum of pixels inside ``r`` via four table lookups."""
    x, y, w, h = r
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > ii.width or y + h > ii.height:
        raise IndexError(f"rect {tuple(r)} outside {ii.width}x{ii.height} image")
    t = ii.sums if table is None else table
    return int(t[y + h, x + w] - t[y + h, x] - t[y, x + w] + t[y, x])


def flip_vertical(img) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(img)[::-1])


def crop(img, r: Rect) -> np.ndarray:
    a = np.asarray(img)
    x, y, w, h = r
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > a.shape[1] or y + h > a.shape[0]:
        raise IndexError(f"crop {tuple(r)} outside {a.shape[1]}x{a.shape[0]} image")
    return a[y:y + h, x:x + w].copy()


def resize_nearest(img, w: int, h: int) -> np.ndarray:
    """Nearest-neighbor resize, source index ``floor(i * src / dst)``."""
    if w < 1 or h < 1:
        raise ValueError(f"target size must be positive, got {w}x{h}")
    a = np.asarray(img)
    sh, sw = a.shape[:2]
    rows = (np.arange(h) * sh) // h
    cols = (np.arange(w) * sw) // w
    return a[rows[:, None], cols[None, :]]


# -- PGM / PPM ---------------------------------------------------------------

def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            end = data.find(b"\n", pos)
            pos = n if end < 0 else end + 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise MalformedHeaderError("unexpected end of header")
    return data[start:pos], pos


def decode_pnm(data: bytes) -> np.ndarray:
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormatError(f"unsupported magic {magic!r}; only P5/P6 are read")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise MalformedHeaderError(f"non-integer header field {tok!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedMaxvalError(f"maxval {maxval} (only 255 supported)")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise MalformedHeaderError("missing whitespace after maxval")
    pos += 1
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise TruncatedPayloadError(f"expected {need} payload bytes, found {len(payload)}")
    a = np.frombuffer(payload, dtype=np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return a.reshape(shape).copy()


def encode_pnm(img) -> bytes:
    a = np.asarray(img)
    if a.ndim == 2:
        magic = b"P5"
    elif a.ndim == 3 and a.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot encode array of shape {a.shape}")
    if a.dtype != np.uint8:
        a = a.astype(np.uint8)
    h, w = a.shape[:2]
    return magic + b"\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(a).tobytes()


def load_image(path) -> np.ndarray:
    return decode_pnm(Path(path).read_bytes())


def save_image(img, path) -> None:
    """Write atomically: temp file in the same directory, then rename."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_bytes(encode_pnm(img))
    os.replace(tmp, path)
