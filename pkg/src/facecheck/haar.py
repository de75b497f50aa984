"""Haar-like feature enumeration and evaluation over integral images.

Five kinds are supported. Each feature is a base rectangle inside the
detection window split into white (+) and black (-) sub-rectangles:

* ``edge-horizontal``: white top half, black bottom half
* ``edge-vertical``: white left half, black right half
* ``line-horizontal``: white / black / white horizontal bands (top to bottom)
* ``line-vertical``: white / black / white vertical stripes (left to right)
* ``four-rectangle``: white top-left and bottom-right, black elsewhere

Black terms are weighted by ``-(white area / black area)`` so that every
feature responds with exactly 0 on a uniform patch.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .imaging import IntegralImage, Rect, rect_sum, round_half_up

BASE_WINDOW = 24

KINDS = ("edge-horizontal", "edge-vertical", "line-horizontal", "line-vertical", "four-rectangle")

# (unit columns, unit rows, colors of the unit cells in row-major order)
_LAYOUT = {
    "edge-horizontal": (1, 2, (1, -1)),
    "edge-vertical": (2, 1, (1, -1)),
    "line-horizontal": (1, 3, (1, -1, 1)),
    "line-vertical": (3, 1, (1, -1, 1)),
    "four-rectangle": (2, 2, (1, -1, -1, 1)),
}


class HaarFeature(NamedTuple):
    kind: str
    x: int
    y: int
    w: int
    h: int

    @property
    def base_rect(self) -> Rect:
        return Rect(self.x, self.y, self.w, self.h)

    def cells(self) -> list[tuple[Rect, int]]:
        """Sub-rectangles with their color (+1 white, -1 black)."""
        ux, uy, colors = _LAYOUT[self.kind]
        cw, ch = self.w // ux, self.h // uy
        out = []
        for k, color in enumerate(colors):
            i, j = k % ux, k // ux
            out.append((Rect(self.x + i * cw, self.y + j * ch, cw, ch), color))
        return out

    @property
    def terms(self) -> list[tuple[Rect, float]]:
        """(rect, weight) pairs at base scale; sum of weight * area is 0."""
        return scaled_terms(self, 1.0)


def scaled_terms(f: HaarFeature, scale: float) -> list[tuple[Rect, float]]:
    """Feature terms with every edge coordinate rounded to ``scale``, weights rebalanced."""
    rects = []
    for r, color in f.cells():
        x0, y0, x1, y1 = (int(v) for v in round_half_up(
            [r.x * scale, r.y * scale, (r.x + r.w) * scale, (r.y + r.h) * scale]))
        rects.append((Rect(x0, y0, x1 - x0, y1 - y0), color))
    white = sum(r.area for r, c in rects if c > 0)
    black = sum(r.area for r, c in rects if c < 0)
    ratio = white / black
    return [(r, 1.0 if c > 0 else -ratio) for r, c in rects]


def count_features(base_window: int = BASE_WINDOW) -> int:
    """Closed-form count: sum over sizes of the number of placements."""
    total = 0
    for ux, uy, _ in _LAYOUT.values():
        for w in range(ux, base_window + 1, ux):
            for h in range(uy, base_window + 1, uy):
                total += (base_window - w + 1) * (base_window - h + 1)
    return total


@functools.lru_cache(maxsize=8)
def _enumerate(base_window: int) -> tuple[HaarFeature, ...]:
    out = []
    n = base_window
    for kind in KINDS:
        ux, uy, _ = _LAYOUT[kind]
        for y in range(n):
            for x in range(n):
                for h in range(uy, n - y + 1, uy):
                    for w in range(ux, n - x + 1, ux):
                        out.append(HaarFeature(kind, x, y, w, h))
    return tuple(out)


def enumerate_features(base_window: int = BASE_WINDOW) -> list[HaarFeature]:
    """Every position and integer size of the five kinds, ordered by (kind, y, x, h, w)."""
    if base_window < 4:
        raise ValueError("base window must be at least 4 pixels")
    return list(_enumerate(base_window))


@functools.lru_cache(maxsize=8)
def _index_map(base_window: int) -> dict:
    return {f: i for i, f in enumerate(_enumerate(base_window))}


def feature_index(f: HaarFeature, base_window: int = BASE_WINDOW) -> int:
    """Position of ``f`` in the canonical enumeration."""
    try:
        return _index_map(base_window)[HaarFeature(*f)]
    except KeyError:
        raise ValueError(f"{f} is not a valid feature for a {base_window}px window") from None


@dataclass(frozen=True)
class WindowPlacement:
    x: int
    y: int
    scale: float = 1.0

    def side(self, base_window: int = BASE_WINDOW) -> int:
        return int(round_half_up(base_window * self.scale))


def window_sigma(ii: IntegralImage, r: Rect) -> float:
    """Standard deviation over ``r``, floored at 1 (variance floor 1)."""
    if ii.squares is None:
        raise ValueError("variance normalization needs the squared-sum table")
    n = r.area
    mean = rect_sum(ii, r) / n
    var = rect_sum(ii, r, ii.squares) / n - mean * mean
    return math.sqrt(max(1.0, var))


def eval_feature(f: HaarFeature, ii: IntegralImage, p: WindowPlacement,
                 normalize: bool = False, base_window: int = BASE_WINDOW) -> float:
    side = p.side(base_window)
    if p.x < 0 or p.y < 0 or p.x + side > ii.width or p.y + side > ii.height:
        raise IndexError(f"window {side}px at ({p.x}, {p.y}) outside {ii.width}x{ii.height} image")
    value = 0.0
    for r, wgt in scaled_terms(f, p.scale):
        value += wgt * rect_sum(ii, Rect(p.x + r.x, p.y + r.y, r.w, r.h))
    if normalize:
        value /= window_sigma(ii, Rect(p.x, p.y, side, side))
    return value


class FeatureTable:
    """Array form of a feature list for vectorized evaluation.

    Term geometry is stored as edge coordinates at base scale, padded to four
    terms per feature (padding terms have zero weight and zero extent).
    """

    def __init__(self, features, base_window: int = BASE_WINDOW):
        self.features = list(features)
        self.base_window = base_window
        n = len(self.features)
        self.x0 = np.zeros((n, 4), np.int64)
        self.y0 = np.zeros((n, 4), np.int64)
        self.x1 = np.zeros((n, 4), np.int64)
        self.y1 = np.zeros((n, 4), np.int64)
        self.color = np.zeros((n, 4), np.int64)
        if n:
            kind = np.array([KINDS.index(f.kind) for f in self.features])
            x, y, w, h = (np.array(v, np.int64) for v in zip(*(f[1:] for f in self.features)))
            for k, name in enumerate(KINDS):
                sel = kind == k
                ux, uy, colors = _LAYOUT[name]
                cw, ch = w[sel] // ux, h[sel] // uy
                for t, c in enumerate(colors):
                    i, j = t % ux, t // ux
                    self.x0[sel, t] = x[sel] + i * cw
                    self.y0[sel, t] = y[sel] + j * ch
                    self.x1[sel, t] = self.x0[sel, t] + cw
                    self.y1[sel, t] = self.y0[sel, t] + ch
                    self.color[sel, t] = c
        self._scaled: dict[float, tuple] = {}

    def __len__(self) -> int:
        return len(self.features)

    def scaled(self, scale: float):
        """Rounded term edges and rebalanced weights at ``scale`` (cached)."""
        got = self._scaled.get(scale)
        if got is None:
            x0, y0, x1, y1 = (round_half_up(a * scale) for a in (self.x0, self.y0, self.x1, self.y1))
            area = (x1 - x0) * (y1 - y0)
            white = np.where(self.color > 0, area, 0).sum(axis=1)
            black = np.where(self.color < 0, area, 0).sum(axis=1)
            ratio = white / black
            weight = np.where(self.color > 0, 1.0, np.where(self.color < 0, -ratio[:, None], 0.0))
            got = (x0, y0, x1, y1, weight)
            self._scaled[scale] = got
        return got

    def raw_values(self, table: np.ndarray, ox: np.ndarray, oy: np.ndarray,
                   rows: np.ndarray, scale: float = 1.0) -> np.ndarray:
        """Unnormalized responses of features ``rows`` at window origins (ox, oy).

        ``table`` is a padded summed-area table, either 2-D (one image, many
        origins) or 3-D (one table per origin, stacked on axis 0).
        Returns an array of shape ``(len(rows), len(ox))``.
        """
        x0, y0, x1, y1, weight = self.scaled(scale)
        out = np.zeros((len(rows), len(ox)), np.float64)
        for t in range(4):
            wt = weight[rows, t]
            live = wt != 0
            if not live.any():
                continue
            rr = rows[live]
            if table.ndim == 2:
                s = _box_sums_2d(table, ox, oy, x0[rr, t], y0[rr, t], x1[rr, t], y1[rr, t])
            else:
                s = _box_sums_3d(table, x0[rr, t], y0[rr, t], x1[rr, t], y1[rr, t])
            out[live] += wt[live, None] * s
        return out


def _box_sums_2d(table, ox, oy, x0, y0, x1, y1):
    w = table.shape[1]
    flat = table.ravel()
    base = (oy * w + ox)[None, :]
    a = flat[base + (y1 * w + x1)[:, None]]
    b = flat[base + (y1 * w + x0)[:, None]]
    c = flat[base + (y0 * w + x1)[:, None]]
    d = flat[base + (y0 * w + x0)[:, None]]
    return a - b - c + d


def _box_sums_3d(tables, x0, y0, x1, y1):
    n, h, w = tables.shape
    flat = tables.reshape(n, h * w)
    return (flat[:, y1 * w + x1] - flat[:, y1 * w + x0]
            - flat[:, y0 * w + x1] + flat[:, y0 * w + x0]).T


def window_sigmas(ii: IntegralImage, ox: np.ndarray, oy: np.ndarray, side: int) -> np.ndarray:
    if ii.squares is None:
        raise ValueError("variance normalization needs the squared-sum table")
    n = side * side

    def box(t):
        return (t[oy + side, ox + side] - t[oy + side, ox] - t[oy, ox + side] + t[oy, ox])

    mean = box(ii.sums) / n
    var = box(ii.squares) / n - mean * mean
    return np.sqrt(np.maximum(1.0, var))


def feature_matrix(samples, table: FeatureTable, normalize: bool = True,
                   chunk: int = 8192) -> np.ndarray:
    """Responses of every feature on every base-size sample, shape ``(features, samples)``.

    ``samples`` is a sequence of base-window gray images (or an array of
    shape ``(n, base, base)``).
    """
    imgs = np.asarray(samples)
    if imgs.ndim != 3 or imgs.shape[1:] != (table.base_window, table.base_window):
        raise ValueError(f"samples must have shape (n, {table.base_window}, {table.base_window})")
    n, b = imgs.shape[0], table.base_window
    a = imgs.astype(np.int64)
    sums = np.zeros((n, b + 1, b + 1), np.int64)
    sums[:, 1:, 1:] = a.cumsum(1).cumsum(2)
    out = np.empty((len(table), n), np.float64)
    zeros = np.zeros(n, np.int64)
    for start in range(0, len(table), chunk):
        rows = np.arange(start, min(start + chunk, len(table)))
        out[rows] = table.raw_values(sums, zeros, zeros, rows)
    if normalize:
        area = b * b
        mean = a.sum(axis=(1, 2)) / area
        var = (a * a).sum(axis=(1, 2)) / area - mean * mean
        out /= np.sqrt(np.maximum(1.0, var))[None, :]
    return out
