import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fixtures import bright_square_image
from facecheck import synthetic
from facecheck.boosting import classify_window
from facecheck.detector import (DetectParams, Detection, detect_multiscale, group_rectangles, largest,
                                raw_detections, scale_ladder, scan_stats)
from facecheck.haar import WindowPlacement, enumerate_features, scaled_terms
from facecheck.imaging import Rect, integral


def brute_force_hits(cascade, img, p: DetectParams):
    """Every ladder window, scored with slice sums instead of an integral image."""
    feats = enumerate_features()
    h, w = img.shape
    a = img.astype(np.int64)
    hits = []
    k = 0
    while True:
        s = p.scale_factor ** k
        side = math.floor(24 * s + 0.5)
        if side > min(w, h):
            break
        k += 1
        step = max(1, math.floor(side * p.step_fraction + 0.5))
        for y in range(0, h - side + 1, step):
            for x in range(0, w - side + 1, step):
                ok = True
                for st_ in cascade.stages:
                    score = 0.0
                    for weak in st_.weaks:
                        v = sum(wt * a[y + r.y:y + r.y + r.h, x + r.x:x + r.x + r.w].sum()
                                for r, wt in scaled_terms(feats[weak.feature_index], s))
                        v *= (24 / side) ** 2
                        score += weak.alpha * (-weak.s if v < weak.theta else weak.s)
                    if score < st_.threshold:
                        ok = False
                        break
                if ok:
                    hits.append(Rect(x, y, side, side))
    return hits


def test_bright_square_single_detection(square_cascade):
    img = bright_square_image()
    p = DetectParams()
    rects, _, _, _ = raw_detections(square_cascade, img, p)
    assert sorted(rects) == sorted(brute_force_hits(square_cascade, img, p))
    dets = detect_multiscale(square_cascade, img, p)
    assert len(dets) == 1
    d = dets[0]
    truth = Rect(32, 32, 24, 24)  # window whose central 8x8 block is the square
    assert abs(d.rect.x - truth.x) <= 1 and abs(d.rect.y - truth.y) <= 1
    assert d.rect.w in (24, 26) and d.rect.w == d.rect.h
    assert d.neighbors == len(rects) > p.min_neighbors


def test_detection_passes_cascade_at_nearest_placement(square_cascade):
    img = bright_square_image()
    ii = integral(img)
    ladder = scale_ladder(square_cascade, 96, 96, DetectParams())
    for d in detect_multiscale(square_cascade, img):
        lvl = min(ladder, key=lambda lv: (abs(lv.side - d.rect.w), lv.side))
        x = round(d.rect.x / lvl.step) * lvl.step
        y = round(d.rect.y / lvl.step) * lvl.step
        assert classify_window(square_cascade, ii, WindowPlacement(x, y, lvl.scale))[0]


def test_determinism_across_workers_and_runs(square_cascade):
    img = bright_square_image(size=120, x=70, y=30)
    img[90:98, 10:18] = 230
    ref = repr(detect_multiscale(square_cascade, img)).encode()
    for workers in (1, 4, 8):
        for _ in range(3):
            assert repr(detect_multiscale(square_cascade, img, workers=workers)).encode() == ref


def test_blank_and_small_images(square_cascade, face_cascade):
    assert detect_multiscale(face_cascade, np.full((120, 160), 128, np.uint8)) == []
    assert detect_multiscale(square_cascade, np.zeros((20, 40), np.uint8)) == []
    assert detect_multiscale(square_cascade, bright_square_image(), DetectParams(min_size=200)) == []


def test_min_size_and_max_size_limit_ladder(square_cascade):
    p = DetectParams(min_size=30, max_size=50)
    sides = [lv.side for lv in scale_ladder(square_cascade, 96, 96, p)]
    assert sides and min(sides) >= 30 and max(sides) <= 50
    with pytest.raises(ValueError):
        DetectParams(min_size=10).validate(24)
    with pytest.raises(ValueError):
        DetectParams(scale_factor=1.0).validate(24)


def test_group_rectangles_examples():
    same = [Rect(10, 10, 50, 50)] * 3
    assert group_rectangles(same, 2) == [Detection(Rect(10, 10, 50, 50), 3, 0.0)]
    far = [Rect(0, 0, 30, 30), Rect(200, 200, 30, 30)]
    assert group_rectangles(far, 1) == []
    raw = [Rect(0, 0, 30, 30), Rect(1, 0, 30, 30), Rect(200, 200, 30, 30)]
    assert [d.neighbors for d in group_rectangles(raw, 0)] == [1, 1, 1]
    assert group_rectangles([], 3) == []


def _components(rects, eps):
    """Union-find over the pairwise similarity rule."""
    parent = list(range(len(rects)))

    def find(i):
        while parent[i] != i:
            i = parent[i]
        return i

    for i, a in enumerate(rects):
        for j, b in enumerate(rects[:i]):
            tw = eps * 0.5 * (a.w + b.w)
            th = eps * 0.5 * (a.h + b.h)
            if abs(a.x - b.x) <= tw and abs(a.y - b.y) <= th and abs(a.w - b.w) <= tw and abs(a.h - b.h) <= th:
                parent[find(i)] = find(j)
    groups = {}
    for i in range(len(rects)):
        groups.setdefault(find(i), []).append(rects[i])
    return list(groups.values())


rect_lists = st.lists(st.builds(Rect, st.integers(0, 60), st.integers(0, 60), st.integers(20, 40),
                                st.integers(20, 40)), max_size=25)


@settings(max_examples=60)
@given(rect_lists, st.integers(1, 4), st.randoms(use_true_random=False))
def test_group_rectangles_matches_oracle_and_is_order_free(rects, mn, rnd):
    got = group_rectangles(rects, mn)
    expect = []
    for g in _components(rects, 0.2):
        if len(g) > mn:
            m = np.floor(np.array(g, float).mean(axis=0) + 0.5).astype(int)
            expect.append((Rect(*m.tolist()), len(g)))
    assert sorted((d.rect, d.neighbors) for d in got) == sorted(expect)
    shuffled = list(rects)
    rnd.shuffle(shuffled)
    assert group_rectangles(shuffled, mn) == got
    assert all(d.neighbors >= mn + 1 for d in got)


@settings(max_examples=40)
@given(rect_lists, st.integers(0, 5))
def test_raising_min_neighbors_never_adds(rects, mn):
    hi = group_rectangles(rects, mn + 1)
    lo = group_rectangles(rects, mn)
    assert len(hi) <= len(lo)
    if mn >= 1:
        assert set((d.rect, d.neighbors) for d in hi) <= set((d.rect, d.neighbors) for d in lo)


def test_largest():
    dets = [Detection(Rect(0, 0, 30, 30), 4, 0.0), Detection(Rect(5, 5, 40, 40), 4, 0.0)]
    assert largest(dets).rect.w == 40
    assert largest([]) is None


def test_face_cascade_finds_synthetic_faces(face_cascade):
    rng = np.random.default_rng(77)
    hits = 0
    for i in range(20):
        ident = synthetic.make_identity(i + 1, seed=1000)
        frame, face = synthetic.random_frame(160, 120, ident, rng, min_face=36, max_face=90)
        d = largest(detect_multiscale(face_cascade, frame))
        hits += d is not None and synthetic.iou(d.rect, face) > 0.5
    assert hits >= 18


def _noise_stats(cascade):
    rng = np.random.default_rng(5)
    img = rng.integers(0, 256, (120, 160)).astype(np.uint8)
    return scan_stats(cascade, img, repeats=1)


def test_scan_stats_counters(face_cascade):
    stats = _noise_stats(face_cascade)
    rej = stats["windows_rejected_by_stage"]
    assert len(rej) == len(face_cascade.stages)
    assert sum(rej) + stats["windows_accepted"] == stats["windows_examined"]
    assert stats["fps_estimate"] > 0


def test_first_two_stages_reject_most_noise(face_cascade):
    stats = _noise_stats(face_cascade)
    assert sum(stats["windows_rejected_by_stage"][:2]) / stats["windows_examined"] >= 0.99


def test_first_stage_rejects_most_noise(face_cascade):
    stats = _noise_stats(face_cascade)
    assert stats["windows_rejected_by_stage"][0] / stats["windows_examined"] > 0.5
