"""Multi-scale sliding-window detection and neighbor grouping.

Scales are scanned by scaling feature rectangles over one integral image
instead of resampling an image pyramid. Feature values at scale ``s`` are
divided by the window area ratio so stage thresholds learned on base-size
windows apply unchanged.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .boosting import Cascade
from .haar import window_sigmas
from .imaging import Rect, as_gray, integral, round_half_up


@dataclass(frozen=True)
class DetectParams:
    scale_factor: float = 1.1
    min_neighbors: int = 3
    min_size: int | None = None
    max_size: int | None = None
    step_fraction: float = 1.0 / 24.0

    def validate(self, base_window: int) -> None:
        if not self.scale_factor > 1.0:
            raise ValueError("scale_factor must be > 1")
        if self.min_neighbors < 0:
            raise ValueError("min_neighbors must be >= 0")
        if self.min_size is not None and self.min_size < base_window:
            raise ValueError(f"min_size must be at least the base window ({base_window})")
        if self.min_size is not None and self.max_size is not None and self.min_size > self.max_size:
            raise ValueError("min_size must not exceed max_size")
        if not self.step_fraction > 0:
            raise ValueError("step_fraction must be positive")


@dataclass(frozen=True)
class Detection:
    rect: Rect
    neighbors: int
    score: float


@dataclass(frozen=True)
class ScaleLevel:
    scale: float
    side: int
    step: int


def scale_ladder(c: Cascade, width: int, height: int, p: DetectParams) -> list[ScaleLevel]:
    """Scales 1, f, f^2, ... whose window fits the image and the size limits."""
    levels = []
    limit = min(width, height)
    if p.max_size is not None:
        limit = min(limit, p.max_size)
    min_size = c.base_window if p.min_size is None else p.min_size
    k = 0
    while True:
        s = p.scale_factor ** k
        side = int(round_half_up(c.base_window * s))
        if side > limit:
            break
        if side >= min_size:
            step = max(1, int(round_half_up(side * p.step_fraction)))
            levels.append(ScaleLevel(s, side, step))
        k += 1
    return levels


class _Scanner:
    """Vectorized cascade evaluation over batches of window origins."""

    def __init__(self, c: Cascade, img):
        self.c = c
        self.ii = integral(img, with_squares=c.normalize)
        ids, self.table = c.used_features()
        self.stage_rows = [np.searchsorted(ids, [w.feature_index for w in st.weaks])
                           for st in c.stages]

    def run(self, level: ScaleLevel, ox: np.ndarray, oy: np.ndarray):
        """Return (accepted mask, final-stage margins, per-stage evaluation counts)."""
        c = self.c
        n = len(ox)
        counts = np.zeros(len(c.stages), np.int64)
        alive = np.arange(n)
        margin = np.zeros(n)
        norm = np.full(n, (c.base_window / level.side) ** 2)
        if c.normalize and n:
            norm /= window_sigmas(self.ii, ox, oy, level.side)
        for k, st in enumerate(c.stages):
            if len(alive) == 0:
                break
            counts[k] = len(alive)
            rows = self.stage_rows[k]
            vals = self.table.raw_values(self.ii.sums, ox[alive], oy[alive], rows, level.scale)
            vals *= norm[alive][None, :]
            score = np.zeros(len(alive))
            for j, w in enumerate(st.weaks):
                score += w.alpha * np.where(vals[j] < w.theta, -w.s, w.s)
            keep = score >= st.threshold
            margin[alive] = score - st.threshold
            alive = alive[keep]
        accepted = np.zeros(n, bool)
        accepted[alive] = True
        return accepted, margin, counts


def _placements(level: ScaleLevel, width: int, height: int):
    xs = np.arange(0, width - level.side + 1, level.step)
    ys = np.arange(0, height - level.side + 1, level.step)
    return xs, ys


def raw_detections(c: Cascade, img, p: DetectParams | None = None, workers: int = 1):
    """Accepted windows before grouping, in (scale, y, x) order.

    Returns ``(rects, margins, stage_counts, windows_examined)``.
    """
    p = p or DetectParams()
    p.validate(c.base_window)
    gray = as_gray(img)
    h, w = gray.shape
    if w < c.base_window or h < c.base_window:
        return [], [], np.zeros(len(c.stages), np.int64), 0
    scanner = _Scanner(c, gray)
    tasks = []
    for level in scale_ladder(c, w, h, p):
        xs, ys = _placements(level, w, h)
        bands = np.array_split(ys, max(1, min(workers, len(ys))))
        for band in bands:
            if len(band):
                tasks.append((level, xs, band))

    def work(task):
        level, xs, band = task
        gx, gy = np.meshgrid(xs, band)
        ox, oy = gx.ravel(), gy.ravel()
        acc, margin, counts = scanner.run(level, ox, oy)
        rects = [Rect(int(x), int(y), level.side, level.side) for x, y in zip(ox[acc], oy[acc])]
        return rects, margin[acc].tolist(), counts, len(ox)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, tasks))
    else:
        results = [work(t) for t in tasks]
    rects, margins = [], []
    counts = np.zeros(len(c.stages), np.int64)
    examined = 0
    for r, m, k, n in results:
        rects += r
        margins += m
        counts += k
        examined += n
    return rects, margins, counts, examined


def detect_multiscale(c: Cascade, img, p: DetectParams | None = None,
                      workers: int = 1) -> list[Detection]:
    p = p or DetectParams()
    rects, margins, _, _ = raw_detections(c, img, p, workers)
    return group_rectangles(rects, p.min_neighbors, scores=margins)


def _sort_key(d: Detection):
    return (d.rect.y, d.rect.x, d.rect.w, d.rect.h, d.neighbors, d.score)


def group_rectangles(raw, min_neighbors: int, eps: float = 0.2, scores=None) -> list[Detection]:
    """Merge similar rectangles; keep groups with more than ``min_neighbors`` members.

    With ``min_neighbors == 0`` no merging happens and every rectangle is
    returned as its own detection.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    rects = [Rect(*r) for r in raw]
    sc = [0.0] * len(rects) if scores is None else [float(s) for s in scores]
    if len(sc) != len(rects):
        raise ValueError("scores must match rectangles")
    if not rects:
        return []
    if min_neighbors == 0:
        return sorted((Detection(r, 1, s) for r, s in zip(rects, sc)), key=_sort_key)

    a = np.array(rects, dtype=np.float64)
    x, y, w, h = a.T
    tol_w = eps * 0.5 * (w[:, None] + w[None, :])
    tol_h = eps * 0.5 * (h[:, None] + h[None, :])
    similar = ((np.abs(x[:, None] - x[None, :]) <= tol_w)
               & (np.abs(y[:, None] - y[None, :]) <= tol_h)
               & (np.abs(w[:, None] - w[None, :]) <= tol_w)
               & (np.abs(h[:, None] - h[None, :]) <= tol_h))
    _, labels = connected_components(csr_matrix(similar), directed=False)

    out = []
    for lab in np.unique(labels):
        members = sorted((rects[i], sc[i]) for i in np.flatnonzero(labels == lab))
        if len(members) <= min_neighbors:
            continue
        arr = np.array([m[0] for m in members], dtype=np.float64)
        mx, my, mw, mh = (int(v) for v in round_half_up(arr.mean(axis=0)))
        score = float(np.mean([m[1] for m in members]))
        out.append(Detection(Rect(mx, my, mw, mh), len(members), score))
    return sorted(out, key=_sort_key)


def largest(detections: list[Detection]) -> Detection | None:
    """Largest-area detection; ties go to the first in canonical order."""
    best = None
    for d in detections:
        if best is None or d.rect.area > best.rect.area:
            best = d
    return best


def scan_stats(c: Cascade, img, p: DetectParams | None = None, repeats: int = 3) -> dict:
    """Window counters for one scan plus a timed frames-per-second estimate."""
    p = p or DetectParams()
    rects, _, counts, examined = raw_detections(c, img, p)
    evaluated = list(counts) + [0]
    rejected = [int(evaluated[k] - (evaluated[k + 1] if k + 1 < len(counts) else len(rects)))
                for k in range(len(counts))]
    start = time.perf_counter()
    for _ in range(max(1, repeats)):
        detect_multiscale(c, img, p)
    elapsed = time.perf_counter() - start
    return {
        "windows_examined": int(examined),
        "windows_rejected_by_stage": rejected,
        "windows_accepted": len(rects),
        "fps_estimate": max(1, repeats) / elapsed if elapsed > 0 else float("inf"),
    }
