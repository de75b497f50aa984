"""Decision stumps, discrete AdaBoost and the attentional cascade.

Feature responses are passed around as matrices of shape
``(n_features, n_samples)`` whose rows correspond to ``feature_ids`` (indices
into the canonical enumeration, ascending). Labels are +1 (face) / -1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import haar
from .haar import BASE_WINDOW, FeatureTable, WindowPlacement
from .imaging import IntegralImage

log = logging.getLogger(__name__)

# Weighted errors closer than this are treated as ties.
TIE_TOL = 1e-12
EPS_CLAMP = 1e-10
CASCADE_MAGIC = "facecheck-cascade v1"


class DegenerateTrainingError(ValueError):
    """Training data contains a single class."""


class TrainingStalledError(RuntimeError):
    """The best weak classifier is no better than chance."""


class CascadeFormatError(ValueError):
    pass


@dataclass(frozen=True)
class WeakClassifier:
    feature_index: int
    theta: float
    s: int
    alpha: float = 0.0


@dataclass(frozen=True)
class Stage:
    weaks: tuple[WeakClassifier, ...]
    threshold: float = 0.0


def weak_response(w: WeakClassifier, f_value: float) -> int:
    return -w.s if f_value < w.theta else w.s


def strong_response(stage: Stage, window) -> tuple[float, int]:
    """Weighted vote over ``stage.weaks``.

    ``window`` maps a canonical feature index to that feature's value on the
    window (a dict, an array over the full enumeration, or a callable).
    """
    get = window if callable(window) else window.__getitem__
    score = 0.0
    for w in stage.weaks:
        score += w.alpha * weak_response(w, get(w.feature_index))
    return score, (1 if score >= stage.threshold else -1)


def _check_labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if not ((y == 1) | (y == -1)).all():
        raise ValueError("labels must be +1 or -1")
    if (y == 1).all() or (y == -1).all():
        raise DegenerateTrainingError("training needs both positive and negative samples")
    return y


def _feature_ids(values, feature_ids):
    if feature_ids is None:
        return np.arange(values.shape[0])
    ids = np.asarray(feature_ids)
    if len(ids) != values.shape[0]:
        raise ValueError("feature_ids must match the rows of the value matrix")
    if len(ids) > 1 and not (np.diff(ids) > 0).all():
        raise ValueError("feature_ids must be strictly increasing")
    return ids


class SortedValues:
    """Per-feature sort order of a value matrix, reused across boosting rounds."""

    def __init__(self, values: np.ndarray):
        self.values = values
        self.order = np.argsort(values, axis=1, kind="stable")
        self.sorted = np.take_along_axis(values, self.order, axis=1)


def _threshold_errors(sv: SortedValues, rows: slice, wp: np.ndarray, wn: np.ndarray):
    """Weighted error for every (row, split k, polarity); invalid splits are inf.

    Split k puts the k smallest values below the threshold.
    """
    order = sv.order[rows]
    srt = sv.sorted[rows]
    m, n = srt.shape
    cp = np.zeros((m, n + 1))
    cn = np.zeros((m, n + 1))
    np.cumsum(wp[order], axis=1, out=cp[:, 1:])
    np.cumsum(wn[order], axis=1, out=cn[:, 1:])
    ptot, ntot = wp.sum(), wn.sum()
    err_pos = cp + (ntot - cn)  # s = +1: below -> -1
    err_neg = cn + (ptot - cp)  # s = -1: below -> +1
    valid = np.ones((m, n + 1), bool)
    valid[:, 1:n] = srt[:, :-1] < srt[:, 1:]
    err_pos[~valid] = np.inf
    err_neg[~valid] = np.inf
    return err_pos, err_neg


def _midpoint(a: float, b: float) -> float:
    mid = (a + b) / 2.0
    return b if mid <= a else mid


def train_weak(values, labels, weights, feature_ids=None, presorted: SortedValues | None = None,
               chunk: int = 16384) -> tuple[WeakClassifier, float]:
    """Best stump over all features by exhaustive threshold scan.

    Candidate thresholds are midpoints between adjacent distinct values plus
    -inf and +inf. Ties (within ``TIE_TOL``) go to the lowest feature index,
    then the lowest threshold, then polarity +1. Returns the stump (alpha 0)
    and its weighted error.
    """
    values = np.asarray(values, dtype=np.float64)
    y = _check_labels(labels)
    w = np.asarray(weights, dtype=np.float64)
    if (w < 0).any():
        raise ValueError("weights must be nonnegative")
    ids = _feature_ids(values, feature_ids)
    sv = presorted if presorted is not None else SortedValues(values)
    wp = np.where(y > 0, w, 0.0)
    wn = np.where(y < 0, w, 0.0)

    row_min = np.empty(values.shape[0])
    for start in range(0, values.shape[0], chunk):
        rows = slice(start, start + chunk)
        ep, en = _threshold_errors(sv, rows, wp, wn)
        row_min[rows] = np.minimum(ep.min(axis=1), en.min(axis=1))
    best = row_min.min()
    row = int(np.flatnonzero(row_min <= best + TIE_TOL)[0])

    ep, en = _threshold_errors(sv, slice(row, row + 1), wp, wn)
    ep, en = ep[0], en[0]
    ok = np.flatnonzero((ep <= best + TIE_TOL) | (en <= best + TIE_TOL))
    k = int(ok[0])
    s = 1 if ep[k] <= best + TIE_TOL else -1
    srt = sv.sorted[row]
    n = len(srt)
    if k == 0:
        theta = -math.inf
    elif k == n:
        theta = math.inf
    else:
        theta = _midpoint(float(srt[k - 1]), float(srt[k]))
    err = float(ep[k] if s == 1 else en[k])
    return WeakClassifier(int(ids[row]), theta, s), err


def _responses(weak: WeakClassifier, row_values: np.ndarray) -> np.ndarray:
    return np.where(row_values < weak.theta, -weak.s, weak.s)


@dataclass
class RoundRecord:
    weak: WeakClassifier
    error: float
    weight_sum: float
    train_error: float


def adaboost(values, labels, rounds: int, feature_ids=None, history: list | None = None,
             stop=None) -> Stage:
    """Discrete AdaBoost; returns a stage with threshold 0.

    ``stop(stage)`` is consulted after every round and may end training early.
    Training also ends after any round with zero weighted error.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    values = np.asarray(values, dtype=np.float64)
    y = _check_labels(labels)
    ids = _feature_ids(values, feature_ids)
    row_of = {int(f): r for r, f in enumerate(ids)}
    sv = SortedValues(values)
    n = values.shape[1]
    w = np.full(n, 1.0 / n)
    score = np.zeros(n)
    weaks: list[WeakClassifier] = []
    for _ in range(rounds):
        weak, _ = train_weak(values, y, w, ids, presorted=sv)
        h = _responses(weak, values[row_of[weak.feature_index]])
        eps = float(w[h != y].sum())
        if eps >= 0.5:
            raise TrainingStalledError(f"best weak classifier has weighted error {eps:.6f} >= 0.5")
        ec = min(max(eps, EPS_CLAMP), 1.0 - EPS_CLAMP)
        alpha = 0.5 * math.log((1.0 - ec) / ec)
        weak = WeakClassifier(weak.feature_index, weak.theta, weak.s, alpha)
        weaks.append(weak)
        w = w * np.exp(-alpha * y * h)
        w /= w.sum()
        score += alpha * h
        if history is not None:
            pred = np.where(score >= 0, 1, -1)
            history.append(RoundRecord(weak, eps, float(w.sum()), float((pred != y).mean())))
        if eps == 0.0:
            break
        if stop is not None and stop(Stage(tuple(weaks))):
            break
    return Stage(tuple(weaks))


def stage_scores(stage: Stage, values: np.ndarray, feature_ids=None) -> np.ndarray:
    """Stage score for every column of a value matrix."""
    ids = _feature_ids(values, feature_ids)
    score = np.zeros(values.shape[1])
    for weak in stage.weaks:
        row = int(np.searchsorted(ids, weak.feature_index))
        if row >= len(ids) or ids[row] != weak.feature_index:
            raise KeyError(f"feature {weak.feature_index} missing from value matrix")
        score += weak.alpha * _responses(weak, values[row])
    return score


def calibrate_stage_threshold(positive_scores, d: float = 0.995) -> float:
    """Largest threshold that keeps at least a fraction ``d`` of positives."""
    s = np.sort(np.asarray(positive_scores, dtype=np.float64))[::-1]
    if len(s) == 0:
        raise ValueError("cannot calibrate without positive samples")
    if not 0.0 < d <= 1.0:
        raise ValueError("detection rate must lie in (0, 1]")
    keep = max(1, math.ceil(d * len(s) - 1e-9))
    return float(s[keep - 1])


@dataclass
class Cascade:
    stages: list[Stage]
    base_window: int = BASE_WINDOW
    normalize: bool = True
    _tables: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def features(self) -> list[haar.HaarFeature]:
        return haar.enumerate_features(self.base_window)

    def used_features(self) -> tuple[np.ndarray, FeatureTable]:
        """Distinct feature indices used by any stage and their table (cached)."""
        key = tuple(self.stages)
        if key not in self._tables:
            ids = sorted({w.feature_index for st in self.stages for w in st.weaks})
            feats = self.features
            self._tables[key] = (np.array(ids, np.int64), FeatureTable([feats[i] for i in ids],
                                                                       self.base_window))
        return self._tables[key]

    def classify_values(self, values: np.ndarray, feature_ids=None) -> np.ndarray:
        """Boolean acceptance for each column of a value matrix."""
        ok = np.ones(values.shape[1], bool)
        for st in self.stages:
            ok &= stage_scores(st, values, feature_ids) >= st.threshold
        return ok


def window_feature_value(c: Cascade, f: haar.HaarFeature, ii: IntegralImage,
                         p: WindowPlacement) -> float:
    """Feature value as the cascade sees it: per base-window area, optionally variance-normalized."""
    side = p.side(c.base_window)
    v = haar.eval_feature(f, ii, p, normalize=c.normalize, base_window=c.base_window)
    return v * (c.base_window / side) ** 2


def classify_window(c: Cascade, ii: IntegralImage, placement: WindowPlacement,
                    counters: list | None = None) -> tuple[bool, int]:
    """Sequential short-circuit evaluation. ``counters[k]`` counts evaluations of stage k."""
    feats = c.features
    for k, st in enumerate(c.stages):
        if counters is not None:
            counters[k] += 1
        score, decision = strong_response(
            st, lambda i: window_feature_value(c, feats[i], ii, placement))
        if decision < 0:
            return False, k + 1
    return True, len(c.stages)


def cascade_accepts(c: Cascade, windows) -> np.ndarray:
    """Acceptance of base-size windows, computing only the features the cascade uses."""
    windows = np.asarray(windows)
    if not c.stages:
        return np.ones(len(windows), bool)
    ids, table = c.used_features()
    values = haar.feature_matrix(windows, table, c.normalize)
    return c.classify_values(values, ids)


def train_cascade(pos, neg_pool, schedule, d: float = 0.995, max_stage_fpr: float = 0.0,
                  feature_ids=None, neg_per_stage: int | None = None, normalize: bool = True,
                  base_window: int = BASE_WINDOW, history: list | None = None) -> Cascade:
    """Train one boosted stage per schedule entry with hard-negative bootstrapping.

    Each stage is trained on the negatives of ``neg_pool`` that every earlier
    stage accepts (the first ``neg_per_stage`` of them in pool order, default
    twice the number of positives). A stage stops adding features once its
    false-positive rate on those negatives is at most ``max_stage_fpr``.
    Training ends early, successfully, when no negatives survive.
    """
    schedule = [int(m) for m in schedule]
    if not schedule or min(schedule) < 1:
        raise ValueError("schedule must be a nonempty list of positive feature counts")
    pos = np.asarray(pos)
    neg_pool = np.asarray(neg_pool)
    if len(pos) == 0 or len(neg_pool) == 0:
        raise DegenerateTrainingError("need both positive and negative training windows")
    quota = 2 * len(pos) if neg_per_stage is None else int(neg_per_stage)
    feats = haar.enumerate_features(base_window)
    ids = np.arange(len(feats)) if feature_ids is None else np.unique(np.asarray(feature_ids))
    table = FeatureTable([feats[i] for i in ids], base_window)
    pv = haar.feature_matrix(pos, table, normalize)

    cascade = Cascade([], base_window, normalize)
    alive = np.ones(len(neg_pool), bool)
    for k, rounds in enumerate(schedule):
        idx = np.flatnonzero(alive)
        if len(idx) == 0:
            log.info("no negatives survive after %d stages; stopping early", k)
            break
        idx = idx[:quota]
        nv = haar.feature_matrix(neg_pool[idx], table, normalize)
        values = np.concatenate([pv, nv], axis=1)
        labels = np.concatenate([np.ones(len(pos), int), -np.ones(len(idx), int)])

        def good_enough(stage):
            thr = calibrate_stage_threshold(stage_scores(stage, pv, ids), d)
            return float((stage_scores(stage, nv, ids) >= thr).mean()) <= max_stage_fpr

        stage = adaboost(values, labels, rounds, ids, stop=good_enough)
        thr = calibrate_stage_threshold(stage_scores(stage, pv, ids), d)
        stage = Stage(stage.weaks, thr)
        fpr = float((stage_scores(stage, nv, ids) >= thr).mean())
        cascade = Cascade(cascade.stages + [stage], base_window, normalize)
        alive[alive] = cascade_accepts(Cascade([stage], base_window, normalize), neg_pool[alive])
        if history is not None:
            history.append({"stage": k, "features": len(stage.weaks), "negatives": len(idx),
                            "fpr": fpr, "survivors": int(alive.sum())})
        log.info("stage %d: %d features, %d negatives, stage fpr %.4f, %d pool survivors",
                 k, len(stage.weaks), len(idx), fpr, int(alive.sum()))
    return cascade


# -- cascade file --------------------------------------------------------------

def _fmt(v: float) -> str:
    return "%.17g" % v


def dumps_cascade(c: Cascade) -> str:
    lines = [CASCADE_MAGIC, f"window {c.base_window}"]
    if not c.normalize:
        lines.append("normalize 0")
    for st in c.stages:
        lines.append(f"stage {_fmt(st.threshold)} {len(st.weaks)}")
        for w in st.weaks:
            lines.append(f"weak {w.feature_index} {_fmt(w.theta)} {w.s} {_fmt(w.alpha)}")
    return "\n".join(lines) + "\n"


def loads_cascade(text: str) -> Cascade:
    if not text.endswith("\n"):
        raise CascadeFormatError("cascade file is truncated (no final newline)")
    lines = text.split("\n")[:-1]
    if not lines or lines[0] != CASCADE_MAGIC:
        head = lines[0] if lines else ""
        raise CascadeFormatError(f"unsupported cascade header {head!r}")
    try:
        key, val = lines[1].split()
        if key != "window":
            raise ValueError
        window = int(val)
    except (IndexError, ValueError):
        raise CascadeFormatError("line 2 must be 'window <N>'") from None
    pos = 2
    normalize = True
    if pos < len(lines) and lines[pos].startswith("normalize "):
        normalize = lines[pos].split()[1] != "0"
        pos += 1
    n_features = haar.count_features(window)
    stages = []
    while pos < len(lines):
        parts = lines[pos].split()
        try:
            if len(parts) != 3 or parts[0] != "stage":
                raise ValueError
            thr, m = float(parts[1]), int(parts[2])
        except ValueError:
            raise CascadeFormatError(f"line {pos + 1}: expected 'stage <threshold> <M>'") from None
        if m < 1 or pos + m > len(lines) - 1:
            raise CascadeFormatError(f"stage at line {pos + 1} is truncated")
        weaks = []
        for j in range(pos + 1, pos + 1 + m):
            parts = lines[j].split()
            try:
                if len(parts) != 5 or parts[0] != "weak":
                    raise ValueError
                fi, theta, s, alpha = int(parts[1]), float(parts[2]), int(parts[3]), float(parts[4])
            except ValueError:
                raise CascadeFormatError(f"line {j + 1}: expected 'weak <i> <theta> <s> <alpha>'") from None
            if not 0 <= fi < n_features or s not in (-1, 1) or not math.isfinite(alpha):
                raise CascadeFormatError(f"line {j + 1}: invalid weak classifier")
            weaks.append(WeakClassifier(fi, theta, s, alpha))
        stages.append(Stage(tuple(weaks), thr))
        pos += 1 + m
    return Cascade(stages, window, normalize)


def save_cascade(c: Cascade, path) -> None:
    Path(path).write_text(dumps_cascade(c), encoding="utf-8")


def load_cascade(path) -> Cascade:
    return loads_cascade(Path(path).read_text(encoding="utf-8"))
