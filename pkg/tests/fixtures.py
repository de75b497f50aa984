"""Builders for deterministic test fixtures."""

from __future__ import annotations

import numpy as np

from facecheck import haar, synthetic
from facecheck.boosting import Cascade, Stage, WeakClassifier, train_cascade
from facecheck.haar import HaarFeature, feature_index

SQUARE_BG, SQUARE_FG = 20, 230


def bright_square_cascade() -> Cascade:
    """Two hand-built stages that accept a window whose central 8x8 block is a bright square.

    Stage 1: the middle of three vertical stripes across rows 8..16 must be
    much brighter than its neighbors. Stage 2: same across columns 8..16.
    No variance normalization, so responses are plain weighted pixel sums.
    """
    f1 = HaarFeature("line-vertical", 0, 8, 24, 8)
    f2 = HaarFeature("line-horizontal", 8, 0, 8, 24)
    theta = -19199.5
    s1 = Stage((WeakClassifier(feature_index(f1), theta, -1, 1.0),), 1.0)
    s2 = Stage((WeakClassifier(feature_index(f2), theta, -1, 1.0),), 1.0)
    return Cascade([s1, s2], normalize=False)


def bright_square_image(size=96, x=40, y=40, side=8) -> np.ndarray:
    img = np.full((size, size), SQUARE_BG, np.uint8)
    img[y:y + side, x:x + side] = SQUARE_FG
    return img


def bright_halves(n: int, rng, left: bool) -> np.ndarray:
    """24x24 chips bright on one half, dark on the other, with noise."""
    out = np.empty((n, 24, 24), np.uint8)
    for i in range(n):
        img = rng.normal(60, 8, (24, 24))
        if left:
            img[:, :12] += rng.uniform(90, 130)
        else:
            img[:, 12:] += rng.uniform(90, 130)
        out[i] = np.clip(np.rint(img), 0, 255)
    return out


def synthetic_cascade(seed: int = 0, npos: int = 400, nneg: int = 30000, nfeat: int = 8000):
    rng = np.random.default_rng(seed)
    pos = synthetic.face_windows(npos, rng)
    neg = np.concatenate([synthetic.frame_negatives(nneg, rng),
                          synthetic.negative_windows(nneg // 4, rng)])
    ids = np.sort(np.random.default_rng(seed + 1).choice(haar.count_features(), nfeat, replace=False))
    return train_cascade(pos, neg, [1, 10, 25, 25, 50], d=0.995, feature_ids=ids)
