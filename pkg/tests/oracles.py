"""Independent brute-force reference implementations used by the tests."""

from __future__ import annotations

import math

import numpy as np

from facecheck.boosting import TIE_TOL


def rect_sum(img, x, y, w, h) -> int:
    total = 0
    for r in range(y, y + h):
        for c in range(x, x + w):
            total += int(img[r, c])
    return total


def count_features(base: int) -> int:
    """Count every (kind, x, y, w, h) placement by walking all rectangles."""
    units = [(1, 2), (2, 1), (1, 3), (3, 1), (2, 2)]
    n = 0
    for ux, uy in units:
        for x in range(base):
            for y in range(base):
                for w in range(1, base - x + 1):
                    for h in range(1, base - y + 1):
                        if w % ux == 0 and h % uy == 0:
                            n += 1
    return n


def lbp_code(img, r, c) -> int:
    center = int(img[r, c])
    ring = [(r - 1, c - 1), (r - 1, c), (r - 1, c + 1), (r, c + 1),
            (r + 1, c + 1), (r + 1, c), (r + 1, c - 1), (r, c - 1)]
    code = 0
    for rr, cc in ring:
        code = (code << 1) | (1 if int(img[rr, cc]) > center else 0)
    return code


def lbp_image(img) -> np.ndarray:
    h, w = img.shape
    out = np.zeros((h - 2, w - 2), np.int64)
    for r in range(1, h - 1):
        for c in range(1, w - 1):
            out[r - 1, c - 1] = lbp_code(img, r, c)
    return out


def grid_histogram(codes, gx, gy) -> np.ndarray:
    h, w = codes.shape
    out = []
    for j in range(gy):
        r0, r1 = j * h // gy, (j + 1) * h // gy
        for i in range(gx):
            c0, c1 = i * w // gx, (i + 1) * w // gx
            bins = [0.0] * 256
            for r in range(r0, r1):
                for c in range(c0, c1):
                    bins[int(codes[r, c])] += 1
            n = (r1 - r0) * (c1 - c0)
            out.extend(b / n if n else 0.0 for b in bins)
    return np.array(out)


def nearest(gallery, labels, query) -> tuple[int, float]:
    """Index and distance of the nearest entry; ties to lowest label, then index."""
    best = None
    for i, g in enumerate(gallery):
        d = math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(g, query)))
        key = (d, int(labels[i]), i)
        if best is None or key < best:
            best = key
    return best[2], best[0]


def percentile_95(xs) -> float:
    """Linear-interpolation percentile written out by hand."""
    s = sorted(xs)
    pos = 0.95 * (len(s) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (s[hi] - s[lo]) * (pos - lo)


def best_stump(values, labels, weights):
    """Exhaustive (feature, threshold, polarity) scan, errors summed directly.

    Returns (row, theta, s, error) with the same tie order as the trainer:
    lowest row, then lowest theta, then s = +1.
    """
    values = np.asarray(values, np.float64)
    y = np.asarray(labels)
    w = np.asarray(weights, np.float64)
    best = None
    for row in range(values.shape[0]):
        v = values[row]
        u = np.unique(v)
        cands = [-math.inf] + [(a + b) / 2.0 for a, b in zip(u[:-1], u[1:])] + [math.inf]
        for theta in cands:
            for s in (1, -1):
                h = np.where(v < theta, -s, s)
                err = float(w[h != y].sum())
                if best is None or err < best[3] - TIE_TOL:
                    best = (row, theta, s, err)
    return best


def stump_errors_vectorized(values, labels, weights, chunk=4096):
    """Per-row minimum error over every midpoint and polarity, summed directly (no prefix sums)."""
    values = np.asarray(values, np.float64)
    y = np.asarray(labels)
    w = np.asarray(weights, np.float64)
    n = values.shape[1]
    out = np.empty(values.shape[0])
    for start in range(0, values.shape[0], chunk):
        v = values[start:start + chunk]
        srt = np.sort(v, axis=1)
        mids = (srt[:, :-1] + srt[:, 1:]) / 2.0
        mids = np.where(srt[:, :-1] < srt[:, 1:], mids, np.nan)
        cands = np.concatenate([np.full((len(v), 1), -np.inf), mids, np.full((len(v), 1), np.inf)], axis=1)
        below = v[:, None, :] < cands[:, :, None]          # (rows, cands, n)
        wrong_pos = np.where(below, y == 1, y == -1)      # s = +1 errs
        e_pos = (wrong_pos * w).sum(axis=2)
        e_neg = ((~wrong_pos) * w).sum(axis=2)
        e = np.minimum(e_pos, e_neg)
        e[np.isnan(cands)] = np.inf
        out[start:start + chunk] = e.min(axis=1)
        del below, wrong_pos
    return out
