"""Accuracy under lighting/occlusion perturbations, training time and throughput."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .boosting import Cascade
from .dataset import face_chip, scan_dataset
from .detector import DetectParams
from .imaging import Rect, as_gray, round_half_up
from .lbph import DEFAULT_THRESHOLD, LbphModel, LbphParams, face_histogram, predict, predict_histogram, train

LIGHTING = ("normal", "low")
MASK = ("none", "worn")
SPLITS = ("paper", "holdout")


@dataclass(frozen=True)
class Condition:
    lighting: str = "normal"
    mask: str = "none"

    def __post_init__(self):
        if self.lighting not in LIGHTING or self.mask not in MASK:
            raise ValueError(f"unknown condition {self.lighting}/{self.mask}")


ALL_CONDITIONS = tuple(Condition(light, mask) for mask in MASK for light in LIGHTING)


@dataclass
class ConditionResult:
    lighting: str
    mask: str
    accuracy: float
    rank1: float = 0.0


@dataclass
class AccuracyReport:
    conditions: list[ConditionResult] = field(default_factory=list)
    training_time_s: float = 0.0
    fps: float = 0.0
    n_train_per_subject: int = 0
    n_test: int = 0
    seed: int = 0
    split_mode: str = "holdout"
    threshold_pct: float = DEFAULT_THRESHOLD

    def accuracy(self, lighting: str = "normal", mask: str = "none") -> float:
        for c in self.conditions:
            if c.lighting == lighting and c.mask == mask:
                return c.accuracy
        raise KeyError(f"{lighting}/{mask} not evaluated")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AccuracyReport":
        d = dict(d)
        d["conditions"] = [ConditionResult(**c) for c in d.get("conditions", [])]
        return cls(**d)


def perturb_low_light(img, factor: float = 0.4) -> np.ndarray:
    """Scale every intensity by ``factor``, rounding half up and clamping to [0, 255]."""
    if factor < 0:
        raise ValueError("factor must be nonnegative")
    a = as_gray(img).astype(np.float64)
    return np.clip(round_half_up(a * factor), 0, 255).astype(np.uint8)


def perturb_mask(img, face_rect: Rect | None = None, fraction: float = 0.45) -> np.ndarray:
    """Fill the bottom ``round(fraction * h)`` rows of ``face_rect`` with gray 128."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be within [0, 1]")
    out = as_gray(img).copy()
    r = face_rect or Rect(0, 0, out.shape[1], out.shape[0])
    rows = int(round_half_up(fraction * r.h))
    if rows:
        out[r.y + r.h - rows:r.y + r.h, r.x:r.x + r.w] = 128
    return out


def apply_condition(img, cond: Condition, face_rect: Rect | None = None) -> np.ndarray:
    out = as_gray(img)
    if cond.mask == "worn":
        out = perturb_mask(out, face_rect)
    if cond.lighting == "low":
        out = perturb_low_light(out)
    return out


def split_dataset(items, mode: str, seed: int, test_fraction: float = 0.2):
    """(train, test) lists of (label, image).

    ``paper`` uses every sample for both; ``holdout`` keeps a seeded, per-label
    ``test_fraction`` (at least one sample) aside.
    """
    if mode not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    if mode == "paper":
        return list(items), list(items)
    rng = np.random.default_rng(seed)
    by_label: dict[int, list] = {}
    for lab, img in items:
        by_label.setdefault(lab, []).append(img)
    train_set, test_set = [], []
    for lab in sorted(by_label):
        imgs = by_label[lab]
        if len(imgs) < 2:
            raise ValueError(f"label {lab} needs at least 2 samples for a held-out split")
        order = rng.permutation(len(imgs))
        k = max(1, int(round_half_up(test_fraction * len(imgs))))
        test_set += [(lab, imgs[i]) for i in order[:k]]
        train_set += [(lab, imgs[i]) for i in order[k:]]
    return train_set, test_set


def _limit_per_label(items, n: int | None):
    if n is None:
        return items
    seen: dict[int, int] = {}
    out = []
    for lab, img in items:
        if seen.get(lab, 0) < n:
            out.append((lab, img))
            seen[lab] = seen.get(lab, 0) + 1
    return out


def measure_fps(cascade: Cascade | None, model: LbphModel, frames, duration_s: float = 1.0,
                params: DetectParams | None = None) -> float:
    """Frames per second of detect + recognize, looping over ``frames`` for at least ``duration_s``.

    Without a cascade the whole frame is treated as the face.
    """
    frames = [as_gray(f) for f in frames]
    if not frames:
        raise ValueError("need at least one frame")
    size = (model.params.face_w, model.params.face_h)
    done = 0
    start = time.perf_counter()
    while True:
        for f in frames:
            if cascade is None:
                predict(model, f)
            else:
                chip, _ = face_chip(cascade, f, size, params, flip=False)
                if chip is not None:
                    predict(model, chip)
            done += 1
        elapsed = time.perf_counter() - start
        if elapsed >= duration_s:
            return done / elapsed


def evaluate(cascade: Cascade | None, dataset_dir, params: LbphParams | None = None,
             conditions=ALL_CONDITIONS, split: str = "holdout", seed: int = 0,
             n_train_per_subject: int | None = None, threshold_pct: float = DEFAULT_THRESHOLD,
             test_fraction: float = 0.2, fps_duration_s: float = 0.5) -> AccuracyReport:
    """Train on the split's training part and score each condition on its test part.

    ``accuracy`` counts predictions that are accepted and correct; ``rank1``
    counts correct nearest labels regardless of the acceptance threshold.
    Dataset images are face chips, so the mask covers the whole chip's lower
    part.
    """
    params = params or LbphParams()
    items = scan_dataset(dataset_dir)
    if len({lab for lab, _ in items}) < 2:
        raise ValueError("evaluation needs a dataset with at least 2 subjects")
    train_set, test_set = split_dataset(items, split, seed, test_fraction)
    train_set = _limit_per_label(train_set, n_train_per_subject)
    if split == "paper":
        test_set = train_set
    model = train(train_set, params)
    per_subject = max(np.bincount([lab for lab, _ in train_set]))
    results = []
    for cond in conditions:
        ok = hit = 0
        for lab, img in test_set:
            hist = face_histogram(apply_condition(img, cond), params)
            pred = predict_histogram(model, hist, threshold_pct)
            ok += pred.accepted and pred.label == lab
            hit += pred.nearest_label == lab
        n = len(test_set)
        results.append(ConditionResult(cond.lighting, cond.mask, ok / n, hit / n))
    fps = measure_fps(cascade, model, [img for _, img in test_set[:10]], fps_duration_s)
    return AccuracyReport(results, model.training_time_s, fps, int(per_subject), len(test_set),
                          seed, split, threshold_pct)


def format_table(report: AccuracyReport) -> str:
    """Text table laid out as: test case, training time, mask condition, normal / low light."""
    header = "Test case\tTraining time\tConditions/Average accuracy\tNormal Light\tLow Light"
    lines = [header]
    cell = {(c.mask, c.lighting): c.accuracy for c in report.conditions}
    first = True
    for mask, label in (("none", "Normal"), ("worn", "Wearing Mask")):
        if not any(m == mask for m, _ in cell):
            continue
        vals = ["%.0f%%" % (100 * cell[(mask, light)]) if (mask, light) in cell else "-"
                for light in LIGHTING]
        lead = (f"{report.n_train_per_subject} images/member", "%.3f seconds" % report.training_time_s) \
            if first else ("", "")
        lines.append("\t".join([*lead, label, *vals]))
        first = False
    return "\n".join(lines) + "\n"


def report_emit(report: AccuracyReport, path) -> tuple[Path, Path]:
    """Write ``path`` (JSON) and a sibling ``.txt`` table; returns both paths."""
    path = Path(path)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    table = path.with_suffix(".txt")
    table.write_text(format_table(report), encoding="utf-8")
    return path, table


def report_load(path) -> AccuracyReport:
    return AccuracyReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
