"""Seeded synthetic fixtures: face-like chips, identity textures and frames.

A synthetic face is a bright oval with dark eyes, brows and mouth. Each
identity adds its own fixed geometry offsets and a blocky texture so that
LBP histograms can tell identities apart while the coarse layout stays
detectable by a single cascade.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import Rect, resize_nearest


@dataclass(frozen=True)
class Identity:
    label: int
    eye_dx: float
    eye_y: float
    mouth_w: float
    skin: float
    texture: np.ndarray  # 16x16 in [-1, 1]


def make_identity(label: int, seed: int = 0) -> Identity:
    rng = np.random.default_rng([seed, label, 7])
    tex = rng.uniform(-1.0, 1.0, (16, 16))
    return Identity(label, rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03),
                    rng.uniform(0.22, 0.34), rng.uniform(150, 190), tex)


def _ellipse(xx, yy, cx, cy, rx, ry):
    return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0


def render_face(size: int, ident: Identity | None = None, rng=None, noise: float = 4.0,
                texture_amp: float = 28.0) -> np.ndarray:
    """A ``size`` x ``size`` face chip whose box spans brow line to chin."""
    rng = rng if rng is not None else np.random.default_rng()
    ident = ident or make_identity(0)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    yy = (yy + 0.5) / size
    xx = (xx + 0.5) / size
    jx, jy = rng.uniform(-0.02, 0.02, 2)
    gain = rng.uniform(0.9, 1.1)
    img = np.full((size, size), 70.0)
    face = _ellipse(xx, yy, 0.5 + jx, 0.5 + jy, 0.48, 0.56)
    img[face] = ident.skin
    tex = resize_nearest(((ident.texture + 1) * 127.5).astype(np.uint8), size, size)
    img[face] += (tex[face] / 127.5 - 1.0) * texture_amp
    ey = 0.36 + ident.eye_y + jy
    for side in (-1, 1):
        ex = 0.5 + side * (0.2 + ident.eye_dx) + jx
        img[_ellipse(xx, yy, ex, ey - 0.13, 0.13, 0.04)] = 55.0   # brow
        img[_ellipse(xx, yy, ex, ey, 0.09, 0.06)] = 35.0          # eye
    img[_ellipse(xx, yy, 0.5 + jx, 0.55 + jy, 0.05, 0.13)] += 20.0  # nose ridge
    img[_ellipse(xx, yy, 0.5 + jx, 0.78 + jy, ident.mouth_w / 2, 0.05)] = 45.0
    img = img * gain + rng.normal(0.0, noise, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def render_background(w: int, h: int, rng) -> np.ndarray:
    """Blocky clutter: upsampled coarse noise plus a gradient and fine noise."""
    coarse = rng.uniform(30, 220, (max(2, h // 12), max(2, w // 12)))
    img = resize_nearest(coarse.astype(np.uint8), w, h).astype(np.float64)
    gy, gx = np.mgrid[0:h, 0:w]
    img += rng.uniform(-30, 30) * gx / w + rng.uniform(-30, 30) * gy / h
    img += rng.normal(0, 8, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def render_frame(w: int, h: int, faces: list[tuple[Rect, Identity]], rng) -> np.ndarray:
    frame = render_background(w, h, rng)
    for r, ident in faces:
        frame[r.y:r.y + r.h, r.x:r.x + r.w] = render_face(r.w, ident, rng)
    return frame


def random_frame(w: int, h: int, ident: Identity, rng, min_face: int = 32,
                 max_face: int | None = None) -> tuple[np.ndarray, Rect]:
    """One face at a random position and size."""
    max_face = max_face or min(w, h) - 8
    side = int(rng.integers(min_face, max_face + 1))
    x = int(rng.integers(0, w - side + 1))
    y = int(rng.integers(0, h - side + 1))
    r = Rect(x, y, side, side)
    return render_frame(w, h, [(r, ident)], rng), r


def _misaligned_face_window(rng, base: int) -> np.ndarray:
    """A window that overlaps a face but is off-center or at the wrong scale."""
    ident = make_identity(int(rng.integers(1, 1000)), seed=int(rng.integers(1 << 30)))
    face = int(rng.integers(2 * base, 4 * base))
    canvas = render_frame(3 * face, 3 * face, [(Rect(face, face, face, face), ident)], rng)
    mode = rng.integers(3)
    if mode == 0:    # shifted by at least 35% of the side
        side = face
        dx, dy = rng.uniform(-0.8, 0.8, 2)
        if max(abs(dx), abs(dy)) < 0.35:
            dx = 0.35 * np.sign(dx or 1.0)
    elif mode == 1:  # face too small in the window
        side = int(face * rng.uniform(1.6, 2.4))
        dx, dy = rng.uniform(-0.1, 0.1, 2)
    else:            # window inside the face
        side = int(face * rng.uniform(0.4, 0.65))
        dx, dy = rng.uniform(-0.4, 0.4, 2)
    cx = 1.5 * face + dx * face
    cy = 1.5 * face + dy * face
    x = int(np.clip(cx - side / 2, 0, 3 * face - side))
    y = int(np.clip(cy - side / 2, 0, 3 * face - side))
    return resize_nearest(canvas[y:y + side, x:x + side], base, base)


def _blob_patch(rng, base: int) -> np.ndarray:
    """Bright patch with a few dark blobs and bars."""
    yy, xx = np.mgrid[0:base, 0:base] / base
    img = np.full((base, base), rng.uniform(100, 220))
    for _ in range(int(rng.integers(1, 5))):
        cx, cy = rng.uniform(0, 1, 2)
        rx, ry = rng.uniform(0.05, 0.3, 2)
        img[_ellipse(xx, yy, cx, cy, rx, ry)] = rng.uniform(20, 90)
    img += rng.normal(0, 6, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def negative_windows(n: int, rng, base: int = 24) -> np.ndarray:
    """Non-face windows: clutter crops, misaligned faces, blobs, pure noise, gradients."""
    out = np.empty((n, base, base), np.uint8)
    for i in range(n):
        kind = i % 6
        if kind in (0, 1):
            side = int(rng.integers(base, 4 * base))
            bg = render_background(side + 8, side + 8, rng)
            x, y = rng.integers(0, 9, 2)
            out[i] = resize_nearest(bg[y:y + side, x:x + side], base, base)
        elif kind == 2:
            out[i] = _misaligned_face_window(rng, base)
        elif kind == 3:
            out[i] = _blob_patch(rng, base)
        elif kind == 4:
            out[i] = rng.integers(0, 256, (base, base))
        else:
            gy, gx = np.mgrid[0:base, 0:base]
            v = rng.uniform(20, 230) + rng.uniform(-4, 4) * gx + rng.uniform(-4, 4) * gy
            out[i] = np.clip(v + rng.normal(0, 5, v.shape), 0, 255)
    return out


def iou(a: Rect, b: Rect) -> float:
    ix = max(0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    return inter / (a.w * a.h + b.w * b.h - inter)


def frame_negatives(n: int, rng, base: int = 24, width: int = 160, height: int = 120,
                    per_frame: int = 200) -> np.ndarray:
    """Windows sampled from frames that contain a face, keeping those with IoU < 0.5.

    Half the windows are drawn around the face, where a detector's false
    positives concentrate.
    """
    out = np.empty((n, base, base), np.uint8)
    i = 0
    while i < n:
        ident = make_identity(int(rng.integers(1, 1000)), seed=int(rng.integers(1 << 30)))
        frame, face = random_frame(width, height, ident, rng, min_face=base + 4)
        for k in range(per_frame):
            if i >= n:
                break
            if k % 2:
                side = int(np.clip(face.w * rng.uniform(0.4, 2.0), base, min(width, height)))
                cx = face.x + face.w / 2 + rng.uniform(-1, 1) * face.w
                cy = face.y + face.h / 2 + rng.uniform(-1, 1) * face.h
                x = int(np.clip(cx - side / 2, 0, width - side))
                y = int(np.clip(cy - side / 2, 0, height - side))
            else:
                side = int(rng.integers(base, min(width, height) + 1))
                x = int(rng.integers(0, width - side + 1))
                y = int(rng.integers(0, height - side + 1))
            r = Rect(x, y, side, side)
            if iou(r, face) >= 0.5:
                continue
            out[i] = resize_nearest(frame[y:y + side, x:x + side], base, base)
            i += 1
    return out


def face_windows(n: int, rng, identities: list[Identity] | None = None, base: int = 24,
                 jitter: float = 0.04) -> np.ndarray:
    """Positive training windows: faces cropped with position/scale jitter, downsampled."""
    identities = identities or [make_identity(k, seed=1000) for k in range(1, 17)]
    out = np.empty((n, base, base), np.uint8)
    for i in range(n):
        face = int(rng.integers(base + 4, 4 * base + 1))
        pad = face
        canvas = render_frame(face + 2 * pad, face + 2 * pad,
                              [(Rect(pad, pad, face, face), identities[i % len(identities)])], rng)
        side = int(round(face * rng.uniform(1 - jitter, 1 + jitter)))
        dx, dy = rng.uniform(-jitter, jitter, 2) * face
        x = int(round(pad + face / 2 + dx - side / 2))
        y = int(round(pad + face / 2 + dy - side / 2))
        out[i] = resize_nearest(canvas[y:y + side, x:x + side], base, base)
    return out


def identity_texture(label: int, size: int = 96, seed: int = 0) -> np.ndarray:
    """A fixed blocky texture standing in for one person's face."""
    rng = np.random.default_rng([seed, label, 11])
    coarse = rng.integers(40, 216, (12, 12)).astype(np.uint8)
    return resize_nearest(coarse, size, size)


def noisy(img: np.ndarray, rng, sigma: float = 6.0) -> np.ndarray:
    out = img.astype(np.float64) + rng.normal(0.0, sigma, img.shape)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def texture_dataset(labels, per_label: int, rng, size: int = 96, sigma: float = 6.0,
                    seed: int = 0) -> list[tuple[int, np.ndarray]]:
    return [(lab, noisy(identity_texture(lab, size, seed), rng, sigma))
            for lab in labels for _ in range(per_label)]


def write_face_dataset(directory, n_subjects: int, per_subject: int, seed: int = 0,
                       size: int = 96, noise: float = 4.0) -> list[int]:
    """Render ``User.<idx>.<seq>.pgm`` face chips for labels 1..n_subjects; returns the labels."""
    from .dataset import sample_name
    from .imaging import save_image

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    labels = list(range(1, n_subjects + 1))
    for lab in labels:
        ident = make_identity(lab, seed)
        for seq in range(1, per_subject + 1):
            save_image(render_face(size, ident, rng, noise=noise), out / sample_name(lab, seq))
    return labels
