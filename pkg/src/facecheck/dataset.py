"""Enrollment capture, the ``User.<idx>.<seq>.pgm`` dataset layout and the roster file."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from itertools import repeat
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .boosting import Cascade
from .detector import DetectParams, detect_multiscale, largest
from .imaging import crop, flip_vertical, load_image, resize_nearest, save_image, to_grayscale

log = logging.getLogger(__name__)

FILENAME_RE = re.compile(r"^User\.(\d+)\.(\d+)\.pgm$")
IMAGE_SUFFIXES = (".pgm", ".ppm")


class SourceExhaustedError(RuntimeError):
    def __init__(self, saved: list[Path], wanted: int):
        super().__init__(f"frame source ran out after {len(saved)} of {wanted} samples")
        self.saved = saved
        self.wanted = wanted


class RosterError(ValueError):
    pass


@dataclass(frozen=True)
class Subject:
    unique_index: int
    display_name: str

    def __post_init__(self):
        if self.unique_index < 1:
            raise ValueError("unique index must be a positive integer")
        if not self.display_name:
            raise ValueError("display name must be nonempty")


def sample_name(idx: int, seq: int) -> str:
    if idx < 1 or seq < 1:
        raise ValueError("index and sequence must be positive")
    return f"User.{idx}.{seq}.pgm"


def parse_sample_name(name: str) -> tuple[int, int] | None:
    m = FILENAME_RE.match(name)
    if not m:
        return None
    idx, seq = int(m.group(1)), int(m.group(2))
    if idx < 1 or seq < 1:
        return None
    return idx, seq


class FrameSource:
    """Deterministic frame provider: a directory in name order, or one image repeated."""

    def __init__(self, frames: Iterable):
        self._frames = frames

    @classmethod
    def from_directory(cls, path) -> "FrameSource":
        files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        return cls(load_image(p) for p in files)

    @classmethod
    def repeated(cls, img, times: int) -> "FrameSource":
        return cls(repeat(img, times))

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self._frames)


def face_chip(cascade: Cascade, frame, face_size: tuple[int, int], params: DetectParams | None = None,
              flip: bool = True):
    """Flip, grayscale, detect and crop the largest face; returns (chip, detection) or (None, None)."""
    gray = to_grayscale(frame)
    if flip:
        gray = flip_vertical(gray)
    det = largest(detect_multiscale(cascade, gray, params or DetectParams()))
    if det is None:
        return None, None
    return resize_nearest(crop(gray, det.rect), *face_size), det


def collect_samples(src: FrameSource, cascade: Cascade, subject: Subject, n: int, out_dir,
                    face_size: tuple[int, int] = (96, 96), params: DetectParams | None = None,
                    flip: bool = True) -> list[Path]:
    """Save exactly ``n`` face chips as ``User.<idx>.<seq>.pgm``, seq = 1..n."""
    if n < 1:
        raise ValueError("sample count must be at least 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    saved: list[Path] = []
    for frame in src:
        chip, _ = face_chip(cascade, frame, face_size, params, flip)
        if chip is None:
            continue
        path = out / sample_name(subject.unique_index, len(saved) + 1)
        save_image(chip, path)
        saved.append(path)
        if len(saved) == n:
            return saved
    raise SourceExhaustedError(saved, n)


def scan_dataset(directory) -> list[tuple[int, np.ndarray]]:
    """(label, image) pairs ordered by (label, seq); nonconforming names are skipped."""
    found = []
    for p in Path(directory).iterdir():
        if not p.is_file():
            continue
        key = parse_sample_name(p.name)
        if key is None:
            log.warning("skipping %s: name does not match User.<idx>.<seq>.pgm", p.name)
            continue
        found.append((key, p))
    found.sort()
    out = []
    for (idx, _), p in found:
        try:
            img = to_grayscale(load_image(p))
        except (OSError, ValueError) as e:
            raise ValueError(f"cannot read {p}: {e}") from e
        out.append((idx, img))
    return out


def roster_load(path) -> dict[int, str]:
    roster: dict[int, str] = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        idx, sep, name = line.partition("\t")
        try:
            subject = Subject(int(idx), name)
        except ValueError:
            raise RosterError(f"line {n}: expected '<index>\\t<name>'") from None
        if not sep:
            raise RosterError(f"line {n}: expected '<index>\\t<name>'")
        if subject.unique_index in roster:
            raise RosterError(f"line {n}: duplicate index {subject.unique_index}")
        roster[subject.unique_index] = name
    return roster


def roster_save(roster: dict[int, str], path) -> None:
    lines = []
    for idx in sorted(roster):
        name = roster[idx]
        Subject(idx, name)
        if "\t" in name or "\n" in name or "\r" in name:
            raise RosterError(f"name for {idx} contains a tab or newline")
        lines.append(f"{idx}\t{name}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")
