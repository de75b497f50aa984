"""Local binary pattern histograms and nearest-neighbor face recognition."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import as_gray, resize_nearest

MODEL_MAGIC = "facecheck-lbph v1"
DEFAULT_THRESHOLD = 85.0

# Clockwise from the top-left neighbor, as (dy, dx).
_NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


class UntrainedModelError(RuntimeError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LbphParams:
    grid_x: int = 10
    grid_y: int = 10
    face_w: int = 96
    face_h: int = 96

    def __post_init__(self):
        if self.grid_x < 1 or self.grid_y < 1:
            raise ValueError("grid dimensions must be positive")
        if self.face_w - 2 < self.grid_x or self.face_h - 2 < self.grid_y:
            raise ValueError("face size too small for the grid (LBP image loses a 1-pixel border)")

    @property
    def hist_len(self) -> int:
        return self.grid_x * self.grid_y * 256


def lbp_transform(img) -> np.ndarray:
    """8-neighbor LBP codes of interior pixels; shape is the input minus 2 on each axis.

    A bit is 1 when the neighbor is strictly brighter than the center; bits are
    packed MSB-first in clockwise order starting at the top-left neighbor.
    """
    a = as_gray(img)
    h, w = a.shape
    if h < 3 or w < 3:
        raise ValueError("LBP needs an image of at least 3x3 pixels")
    center = a[1:-1, 1:-1]
    code = np.zeros(center.shape, np.uint8)
    for k, (dy, dx) in enumerate(_NEIGHBORS):
        nb = a[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
        code |= (nb > center).astype(np.uint8) << np.uint8(7 - k)
    return code


def cell_bounds(n: int, cells: int) -> np.ndarray:
    """Floor cell boundaries; the last cell takes the remainder."""
    return (np.arange(cells + 1) * n) // cells


def grid_histogram(lbp, p: LbphParams) -> np.ndarray:
    """Concatenated per-cell 256-bin histograms, each divided by its cell's pixel count."""
    codes = np.asarray(lbp)
    h, w = codes.shape
    if h < p.grid_y or w < p.grid_x:
        raise ValueError("LBP image smaller than the grid")
    rb, cb = cell_bounds(h, p.grid_y), cell_bounds(w, p.grid_x)
    row_cell = np.repeat(np.arange(p.grid_y), np.diff(rb))
    col_cell = np.repeat(np.arange(p.grid_x), np.diff(cb))
    cell = row_cell[:, None] * p.grid_x + col_cell[None, :]
    counts = np.bincount((cell * 256 + codes).ravel(), minlength=p.hist_len).astype(np.float64)
    blocks = counts.reshape(-1, 256)
    sizes = np.outer(np.diff(rb), np.diff(cb)).ravel().astype(np.float64)
    np.divide(blocks, sizes[:, None], out=blocks, where=sizes[:, None] > 0)
    return counts


def face_histogram(face, p: LbphParams) -> np.ndarray:
    chip = resize_nearest(as_gray(face), p.face_w, p.face_h)
    return grid_histogram(lbp_transform(chip), p)


@dataclass(frozen=True)
class Prediction:
    label: int | None
    distance: float
    confidence_pct: float
    accepted: bool
    nearest_label: int


@dataclass
class LbphModel:
    params: LbphParams
    labels: np.ndarray
    hists: np.ndarray
    d0: float
    label_names: dict[int, str] = field(default_factory=dict)
    training_time_s: float = 0.0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, np.int64)
        self.hists = np.asarray(self.hists, np.float64).reshape(len(self.labels), -1)
        if self.hists.shape[1] != self.params.hist_len:
            raise ModelFormatError(f"histogram length {self.hists.shape[1]} does not match "
                                   f"grid {self.params.grid_x}x{self.params.grid_y}")
        if not self.d0 > 0:
            raise ValueError("calibration distance d0 must be positive")

    def __len__(self) -> int:
        return len(self.labels)

    def name_of(self, label: int) -> str:
        return self.label_names.get(label, str(label))


def _pairwise_distances(h: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", h, h)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (h @ h.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def max_distance(p: LbphParams) -> float:
    """Largest Euclidean distance between two per-cell normalized histograms."""
    return math.sqrt(2.0 * p.grid_x * p.grid_y)


def calibration_distance(hists: np.ndarray, labels: np.ndarray, p: LbphParams) -> float:
    """95th percentile of each sample's distance to its nearest same-label sample.

    Falls back to nearest neighbors of any label when no label has two samples,
    and to the theoretical maximum when there is nothing to compare or the
    percentile is zero.
    """
    labels = np.asarray(labels)
    if len(labels) < 2:
        return max_distance(p)
    d = _pairwise_distances(hists)
    np.fill_diagonal(d, np.inf)
    same = labels[:, None] == labels[None, :]
    has_peer = (same & ~np.eye(len(labels), dtype=bool)).any(axis=1)
    if has_peer.any():
        nn = np.where(same, d, np.inf).min(axis=1)[has_peer]
    else:
        nn = d.min(axis=1)
    d0 = float(np.percentile(nn, 95))
    return d0 if d0 > 0 else max_distance(p)


def train(dataset, p: LbphParams | None = None, label_names: dict | None = None) -> LbphModel:
    """One histogram entry per (label, image) pair."""
    p = p or LbphParams()
    items = list(dataset)
    if not items:
        raise ValueError("cannot train on an empty dataset")
    start = time.perf_counter()
    labels = np.array([int(lab) for lab, _ in items], np.int64)
    hists = np.stack([face_histogram(img, p) for _, img in items])
    d0 = calibration_distance(hists, labels, p)
    elapsed = time.perf_counter() - start
    return LbphModel(p, labels, hists, d0, dict(label_names or {}), elapsed)


def confidence_pct(distance: float, d0: float) -> float:
    c = 100.0 * (d0 - distance) / d0
    return min(100.0, max(0.0, c))


def predict_histogram(m: LbphModel, hist: np.ndarray,
                      threshold_pct: float = DEFAULT_THRESHOLD) -> Prediction:
    if m is None or len(m) == 0:
        raise UntrainedModelError("model has no entries")
    diff = m.hists - np.asarray(hist, np.float64)[None, :]
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    best = dist.min()
    # ties: lowest label, then lowest entry index
    tied = np.flatnonzero(dist == best)
    i = int(tied[np.lexsort((tied, m.labels[tied]))[0]])
    d = float(dist[i])
    conf = confidence_pct(d, m.d0)
    ok = conf > threshold_pct
    nearest = int(m.labels[i])
    return Prediction(nearest if ok else None, d, conf, ok, nearest)


def predict(m: LbphModel, face, threshold_pct: float = DEFAULT_THRESHOLD) -> Prediction:
    if m is None or len(m) == 0:
        raise UntrainedModelError("model has no entries")
    return predict_histogram(m, face_histogram(face, m.params), threshold_pct)


# -- model file ----------------------------------------------------------------

def _escape(name: str) -> str:
    return (name.replace("%", "%25").replace(";", "%3B").replace("=", "%3D")
            .replace("\n", "%0A").replace("\r", "%0D"))


def _unescape(text: str) -> str:
    return (text.replace("%0D", "\r").replace("%0A", "\n").replace("%3D", "=")
            .replace("%3B", ";").replace("%25", "%"))


def _fmt(v: float) -> str:
    return "0" if v == 0.0 else "%.17g" % v


def dumps_model(m: LbphModel) -> str:
    p = m.params
    lines = [MODEL_MAGIC,
             f"params {p.grid_x} {p.grid_y} {p.face_w} {p.face_h} {'%.17g' % m.d0}",
             "names " + ";".join(f"{k}={_escape(v)}" for k, v in sorted(m.label_names.items()))]
    for lab, h in zip(m.labels, m.hists):
        lines.append(f"entry {int(lab)} " + " ".join(map(_fmt, h.tolist())))
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> LbphModel:
    lines = text.splitlines()
    if not lines or lines[0] != MODEL_MAGIC:
        head = lines[0] if lines else ""
        raise ModelFormatError(f"unsupported model header {head!r}")
    try:
        parts = lines[1].split()
        if parts[0] != "params" or len(parts) != 6:
            raise ValueError
        gx, gy, fw, fh = (int(v) for v in parts[1:5])
        d0 = float(parts[5])
        params = LbphParams(gx, gy, fw, fh)
    except (IndexError, ValueError):
        raise ModelFormatError("line 2 must be 'params <gx> <gy> <fw> <fh> <d0>'") from None
    if len(lines) < 3 or not lines[2].startswith("names"):
        raise ModelFormatError("line 3 must be 'names ...'")
    names = {}
    body = lines[2][len("names"):].strip()
    for item in filter(None, body.split(";")):
        key, sep, val = item.partition("=")
        if not sep:
            raise ModelFormatError(f"bad name mapping {item!r}")
        names[int(key)] = _unescape(val)
    labels, hists = [], []
    for n, line in enumerate(lines[3:], start=4):
        parts = line.split()
        if not parts or parts[0] != "entry":
            raise ModelFormatError(f"line {n}: expected 'entry <label> <bins...>'")
        if len(parts) - 2 != params.hist_len:
            raise ModelFormatError(f"line {n}: {len(parts) - 2} bins, expected {params.hist_len}")
        labels.append(int(parts[1]))
        hists.append(np.array(parts[2:], dtype=np.float64))
    if not labels:
        raise ModelFormatError("model has no entries")
    return LbphModel(params, np.array(labels), np.stack(hists), d0, names)


def save_model(m: LbphModel, path) -> None:
    Path(path).write_text(dumps_model(m), encoding="utf-8")


def load_model(path) -> LbphModel:
    return loads_model(Path(path).read_text(encoding="utf-8"))
