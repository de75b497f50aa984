import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from facecheck import synthetic
from facecheck.dataset import (FrameSource, RosterError, SourceExhaustedError, Subject, collect_samples,
                               parse_sample_name, roster_load, roster_save, sample_name, scan_dataset)
from facecheck.imaging import flip_vertical, load_image, save_image


def camera_frames(n, label, seed=3):
    """Upside-down frames, as the enrollment camera delivers them."""
    rng = np.random.default_rng(seed)
    ident = synthetic.make_identity(label, seed=1000)
    return [flip_vertical(synthetic.random_frame(160, 120, ident, rng, min_face=48, max_face=90)[0])
            for _ in range(n)]


@given(st.integers(1, 10 ** 6), st.integers(1, 10 ** 6))
def test_sample_name_round_trip(idx, seq):
    name = sample_name(idx, seq)
    assert parse_sample_name(name) == (idx, seq)


@pytest.mark.parametrize("name", ["User.2.banana.pgm", "User.0.1.pgm", "User.1.0.pgm", "user.1.1.pgm",
                                  "User.1.1.ppm", "User.1.1.pgm.bak", "User.-1.1.pgm", "User.1.pgm"])
def test_nonconforming_names(name):
    assert parse_sample_name(name) is None


def test_sample_name_rejects_nonpositive():
    with pytest.raises(ValueError):
        sample_name(0, 1)


def test_subject_validation():
    with pytest.raises(ValueError):
        Subject(0, "x")
    with pytest.raises(ValueError):
        Subject(1, "")


def test_collect_exactly_n(face_cascade, tmp_path):
    frames = camera_frames(40, 3)
    paths = collect_samples(FrameSource(frames), face_cascade, Subject(3, "Cy"), 30, tmp_path)
    assert [p.name for p in paths] == [f"User.3.{k}.pgm" for k in range(1, 31)]
    assert sorted(p.name for p in tmp_path.iterdir()) == sorted(p.name for p in paths)
    for p in paths:
        assert load_image(p).shape == (96, 96)
    got = scan_dataset(tmp_path)
    assert [lab for lab, _ in got] == [3] * 30


def test_collect_exhaustion_keeps_partial_files(face_cascade, tmp_path):
    blank = np.full((120, 160), 128, np.uint8)
    with pytest.raises(SourceExhaustedError) as e:
        collect_samples(FrameSource.repeated(blank, 5), face_cascade, Subject(1, "A"), 3, tmp_path / "a")
    assert e.value.saved == [] and list((tmp_path / "a").iterdir()) == []
    frames = camera_frames(4, 1)
    with pytest.raises(SourceExhaustedError) as e:
        collect_samples(FrameSource(frames), face_cascade, Subject(1, "A"), 30, tmp_path / "b")
    assert 0 < len(e.value.saved) <= 4
    assert sorted(p.name for p in (tmp_path / "b").iterdir()) == sorted(p.name for p in e.value.saved)


def test_collect_rejects_zero(face_cascade, tmp_path):
    with pytest.raises(ValueError):
        collect_samples(FrameSource([]), face_cascade, Subject(1, "A"), 0, tmp_path)


def test_frame_source_directory_order(tmp_path):
    for name, v in [("b.pgm", 2), ("a.pgm", 1), ("c.txt", 0), ("c.ppm", 3)]:
        if name.endswith(".txt"):
            (tmp_path / name).write_text("x")
        elif name.endswith(".ppm"):
            save_image(np.full((2, 2, 3), v, np.uint8), tmp_path / name)
        else:
            save_image(np.full((2, 2), v, np.uint8), tmp_path / name)
    got = [int(f.reshape(-1)[0]) for f in FrameSource.from_directory(tmp_path)]
    assert got == [1, 2, 3]
    assert len(list(FrameSource.repeated(np.zeros((2, 2)), 4))) == 4


def test_scan_order_and_skips(tmp_path, caplog):
    for idx, seq in [(2, 10), (1, 2), (2, 9), (1, 1)]:
        save_image(np.full((3, 3), idx * 10 + seq, np.uint8), tmp_path / sample_name(idx, seq))
    save_image(np.zeros((3, 3), np.uint8), tmp_path / "User.2.banana.pgm")
    (tmp_path / "sub").mkdir()
    with caplog.at_level(logging.WARNING):
        got = scan_dataset(tmp_path)
    assert [int(img[0, 0]) for _, img in got] == [11, 12, 29, 30]
    assert [lab for lab, _ in got] == [1, 1, 2, 2]
    assert "User.2.banana.pgm" in caplog.text


def test_scan_empty_and_unreadable(tmp_path):
    assert scan_dataset(tmp_path) == []
    (tmp_path / "User.1.1.pgm").write_bytes(b"P5\n2 2\n255\n\x00")
    with pytest.raises(ValueError, match="User.1.1.pgm"):
        scan_dataset(tmp_path)


def test_roster_examples(tmp_path):
    p = tmp_path / "roster.tsv"
    p.write_text("1\tAlice\n", encoding="utf-8")
    assert roster_load(p) == {1: "Alice"}
    p.write_text("1\tAlice\n1\tBob\n", encoding="utf-8")
    with pytest.raises(RosterError):
        roster_load(p)
    for bad in ("x\tAlice\n", "1 Alice\n", "0\tZero\n", "2\t\n"):
        p.write_text(bad, encoding="utf-8")
        with pytest.raises(RosterError):
            roster_load(p)
    with pytest.raises(RosterError):
        roster_save({1: "tab\there"}, p)


names = st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\t\n\r\x0b\x0c\x1c\x1d\x1e\x85  "),
                min_size=1, max_size=20)


@given(st.dictionaries(st.integers(1, 10 ** 6), names, max_size=8))
def test_roster_round_trip(tmp_path_factory, roster):
    p = tmp_path_factory.mktemp("r") / "roster.tsv"
    roster_save(roster, p)
    assert roster_load(p) == roster
