"""``facecheck`` command-line entry point."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import attendance, boosting, dataset, evaluation, haar, lbph, synthetic
from .detector import DetectParams, detect_multiscale, largest
from .imaging import ImageFormatError, crop, load_image, resize_nearest, save_image, to_grayscale

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRANSPORT = 0, 1, 2, 3

log = logging.getLogger("facecheck")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _grid(text: str) -> tuple[int, int]:
    try:
        gx, gy = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError("grid must look like 10x10") from None
    if gx < 1 or gy < 1:
        raise argparse.ArgumentTypeError("grid dimensions must be positive")
    return gx, gy


def _schedule(text: str) -> list[int]:
    try:
        out = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError("schedule must be comma-separated integers") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("schedule entries must be positive")
    return out


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text}")
    return v


def _percent(text: str) -> float:
    v = _nonneg_float(text)
    if v > 100:
        raise argparse.ArgumentTypeError("threshold must be within [0, 100]")
    return v


def _bind(text: str) -> str:
    try:
        attendance.parse_bind(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None
    return text


def _env(name: str, default, conv=str):
    raw = os.environ.get(name)
    if raw is None:
        return default
    try:
        return conv(raw)
    except (argparse.ArgumentTypeError, ValueError) as e:
        raise UsageError(f"invalid {name}={raw!r}: {e}") from None


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="facecheck", description="Face detection, recognition and attendance logging.",
                formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help_text):
        return sub.add_parser(name, help=help_text, description=help_text, formatter_class=fmt)

    threshold = _env("FACECHECK_THRESHOLD", lbph.DEFAULT_THRESHOLD, _percent)

    s = cmd("enroll", "capture labeled face chips from a directory of frames")
    s.add_argument("--source", required=True, help="directory of frames, read in name order")
    s.add_argument("--cascade", required=True, help="cascade file")
    s.add_argument("--index", required=True, type=_positive, help="subject unique index")
    s.add_argument("--name", required=True, help="subject display name")
    s.add_argument("--count", type=_positive, default=30, help="number of samples to save")
    s.add_argument("--out", required=True, help="dataset directory")
    s.add_argument("--roster", default=None, help="roster file to add the subject to")
    s.add_argument("--face-size", type=_positive, default=96, help="saved chip side in pixels")
    s.add_argument("--no-flip", action="store_true", help="do not flip frames vertically")

    s = cmd("train-recognizer", "train the LBPH recognizer on a dataset directory")
    s.add_argument("--dataset", required=True, help="directory of User.<idx>.<seq>.pgm chips")
    s.add_argument("--out", required=True, help="model file to write")
    s.add_argument("--grid", type=_grid, default=(10, 10), help="histogram grid, COLSxROWS")
    s.add_argument("--face-size", type=_positive, default=96, help="face side in pixels")
    s.add_argument("--roster", default=None, help="roster file with display names")

    s = cmd("train-cascade", "train a boosted Haar cascade from positive and negative images")
    s.add_argument("--pos", required=True, help="directory of face images (resized to 24x24)")
    s.add_argument("--neg", required=True, help="directory of face-free images")
    s.add_argument("--schedule", type=_schedule, default=[1, 10, 25, 25, 50],
                   help="features per stage")
    s.add_argument("--out", required=True, help="cascade file to write")
    s.add_argument("--detection-rate", type=float, default=0.995,
                   help="per-stage detection rate on the positives")
    s.add_argument("--max-stage-fpr", type=float, default=0.0,
                   help="stop adding features to a stage once its false-positive rate is this low")
    s.add_argument("--features", type=int, default=8000,
                   help="random subset of Haar features to consider (0 = all)")
    s.add_argument("--neg-windows", type=_positive, default=200,
                   help="random windows drawn from each negative image larger than 24x24")
    s.add_argument("--neg-per-stage", type=_positive, default=None,
                   help="negatives per stage (default twice the positives)")
    s.add_argument("--seed", type=int, default=0, help="seed for feature and window sampling")

    def detect_flags(s):
        s.add_argument("--scale-factor", type=float, default=1.1, help="scale ladder ratio")
        s.add_argument("--min-neighbors", type=int, default=3,
                       help="keep groups with more raw hits than this")
        s.add_argument("--min-size", type=int, default=None, help="smallest window side")
        s.add_argument("--workers", type=_positive, default=1, help="scan threads")

    s = cmd("detect", "print detected faces as 'x y w h neighbors'")
    s.add_argument("--cascade", required=True, help="cascade file")
    s.add_argument("--image", required=True, help="PGM/PPM image")
    detect_flags(s)

    s = cmd("recognize", "print 'label name confidence' or 'unknown confidence'")
    s.add_argument("--cascade", default=None, help="cascade file (required unless --whole-image)")
    s.add_argument("--model", required=True, help="model file")
    s.add_argument("--image", required=True, help="PGM/PPM image")
    s.add_argument("--threshold", type=_percent, default=threshold,
                   help="accept when confidence exceeds this percentage (env FACECHECK_THRESHOLD)")
    s.add_argument("--whole-image", action="store_true",
                   help="treat the image as a face chip and skip detection")
    detect_flags(s)

    s = cmd("checkin", "recognize frames and upload attendance records")
    s.add_argument("--cascade", required=True, help="cascade file")
    s.add_argument("--model", required=True, help="model file")
    s.add_argument("--source", required=True, help="directory of frames, read in name order")
    s.add_argument("--server", required=True, help="attendance service URL")
    s.add_argument("--location", required=True, help="device location string")
    s.add_argument("--threshold", type=_percent, default=threshold,
                   help="accept when confidence exceeds this percentage (env FACECHECK_THRESHOLD)")
    s.add_argument("--cooldown", type=_nonneg_float, default=attendance.DEFAULT_COOLDOWN_S,
                   help="seconds before the same subject is recorded again")
    s.add_argument("--no-flip", action="store_true", help="do not flip frames vertically")

    s = cmd("serve", "run the attendance record service")
    s.add_argument("--store", default=_env("FACECHECK_STORE", "attendance-store"),
                   help="store directory (env FACECHECK_STORE)")
    s.add_argument("--bind", type=_bind, default=_env("FACECHECK_BIND", "127.0.0.1:8080", _bind),
                   help="HOST:PORT to listen on (env FACECHECK_BIND)")
    s.add_argument("--retention-days", type=_positive, default=None,
                   help="prune records older than this at startup")
    s.add_argument("--cooldown", type=_nonneg_float, default=attendance.DEFAULT_COOLDOWN_S,
                   help="seconds before the same subject is recorded again")

    s = cmd("eval", "accuracy under lighting and mask perturbations")
    s.add_argument("--cascade", default=None, help="cascade file, used for the fps measurement")
    s.add_argument("--dataset", required=True, help="directory of User.<idx>.<seq>.pgm chips")
    s.add_argument("--split", choices=evaluation.SPLITS, default="holdout",
                   help="paper = train on the test set; holdout = seeded 80/20 split")
    s.add_argument("--seed", type=int, default=0, help="split seed")
    s.add_argument("--out", required=True, help="report JSON path (a .txt table is written beside it)")
    s.add_argument("--threshold", type=_percent, default=threshold,
                   help="acceptance threshold (env FACECHECK_THRESHOLD)")
    s.add_argument("--train-per-subject", type=_positive, default=None,
                   help="cap on training samples per subject")
    s.add_argument("--grid", type=_grid, default=(10, 10), help="histogram grid, COLSxROWS")
    s.add_argument("--face-size", type=_positive, default=96, help="face side in pixels")

    s = cmd("synth", "write seeded synthetic fixtures")
    s.add_argument("kind", choices=("faces", "windows", "frames"),
                   help="faces = dataset chips; windows = pos/neg dirs; frames = one subject's frames")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=0, help="random seed")
    s.add_argument("--subjects", type=_positive, default=5, help="faces: number of subjects")
    s.add_argument("--count", type=_positive, default=40,
                   help="faces: chips per subject; windows: positives; frames: frames")
    s.add_argument("--subject", type=_positive, default=1, help="frames: identity label")
    s.add_argument("--flip", action="store_true", help="frames: store frames upside down")
    return p


def _detect_params(a) -> DetectParams:
    return DetectParams(scale_factor=a.scale_factor, min_neighbors=a.min_neighbors, min_size=a.min_size)


def _images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"{d} is not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in dataset.IMAGE_SUFFIXES)


def cmd_enroll(a) -> int:
    cascade = boosting.load_cascade(a.cascade)
    subject = dataset.Subject(a.index, a.name)
    src = dataset.FrameSource.from_directory(a.source)
    saved = dataset.collect_samples(src, cascade, subject, a.count, a.out,
                                    (a.face_size, a.face_size), flip=not a.no_flip)
    if a.roster:
        roster = dataset.roster_load(a.roster) if Path(a.roster).exists() else {}
        roster[subject.unique_index] = subject.display_name
        dataset.roster_save(roster, a.roster)
    print(len(saved))
    return EXIT_OK


def cmd_train_recognizer(a) -> int:
    items = dataset.scan_dataset(a.dataset)
    names = dataset.roster_load(a.roster) if a.roster else {}
    params = lbph.LbphParams(a.grid[0], a.grid[1], a.face_size, a.face_size)
    model = lbph.train(items, params, names)
    lbph.save_model(model, a.out)
    log.info("trained %d entries over %d labels", len(model), len(set(model.labels.tolist())))
    print("%.3f" % model.training_time_s)
    return EXIT_OK


def _negative_windows(paths, per_image: int, rng, base: int) -> np.ndarray:
    out = []
    for p in paths:
        img = to_grayscale(load_image(p))
        h, w = img.shape
        if (h, w) == (base, base):
            out.append(img)
            continue
        if min(h, w) < base:
            log.warning("skipping %s: smaller than %dx%d", p, base, base)
            continue
        for _ in range(per_image):
            side = int(rng.integers(base, min(h, w) + 1))
            x, y = int(rng.integers(0, w - side + 1)), int(rng.integers(0, h - side + 1))
            out.append(resize_nearest(img[y:y + side, x:x + side], base, base))
    if not out:
        raise ValueError("no usable negative images")
    return np.stack(out)


def cmd_train_cascade(a) -> int:
    base = haar.BASE_WINDOW
    rng = np.random.default_rng(a.seed)
    pos = np.stack([resize_nearest(to_grayscale(load_image(p)), base, base) for p in _images(a.pos)])
    neg = _negative_windows(_images(a.neg), a.neg_windows, rng, base)
    total = haar.count_features(base)
    ids = None
    if a.features and a.features < total:
        ids = np.sort(rng.choice(total, a.features, replace=False))
    c = boosting.train_cascade(pos, neg, a.schedule, d=a.detection_rate, max_stage_fpr=a.max_stage_fpr,
                               feature_ids=ids, neg_per_stage=a.neg_per_stage)
    boosting.save_cascade(c, a.out)
    print(" ".join(str(len(s.weaks)) for s in c.stages))
    return EXIT_OK


def cmd_detect(a) -> int:
    c = boosting.load_cascade(a.cascade)
    img = to_grayscale(load_image(a.image))
    for d in detect_multiscale(c, img, _detect_params(a), workers=a.workers):
        r = d.rect
        print(f"{r.x} {r.y} {r.w} {r.h} {d.neighbors}")
    return EXIT_OK


def cmd_recognize(a) -> int:
    model = lbph.load_model(a.model)
    img = to_grayscale(load_image(a.image))
    if not a.whole_image:
        if not a.cascade:
            raise UsageError("recognize: --cascade is required unless --whole-image is given")
        c = boosting.load_cascade(a.cascade)
        det = largest(detect_multiscale(c, img, _detect_params(a), workers=a.workers))
        if det is None:
            print("no face detected", file=sys.stderr)
            return EXIT_DATA
        img = crop(img, det.rect)
    pred = lbph.predict(model, img, a.threshold)
    if pred.accepted:
        print(f"{pred.label} {model.name_of(pred.label)} {pred.confidence_pct:.2f}")
    else:
        print(f"unknown {pred.confidence_pct:.2f}")
    return EXIT_OK


def cmd_checkin(a) -> int:
    cascade = boosting.load_cascade(a.cascade)
    model = lbph.load_model(a.model)
    store = attendance.RemoteStore(a.server)
    for path in _images(a.source):
        try:
            rec = attendance.check_in(cascade, model, load_image(path), a.location, a.threshold, store,
                                      cooldown_seconds=a.cooldown, flip=not a.no_flip)
        except attendance.NoFaceError:
            log.info("%s: no face", path.name)
            continue
        if rec is not None:
            print(f"{rec.record_id} {rec.subject_label} {rec.subject_name} {rec.confidence_pct:.2f}")
    return EXIT_OK


def cmd_serve(a) -> int:
    srv = attendance.AttendanceServer(a.store, a.bind, cooldown_seconds=a.cooldown,
                                      retention_days=a.retention_days)
    print(f"listening on {srv.url}", file=sys.stderr)
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv.httpd.server_close()
    return EXIT_OK


def cmd_eval(a) -> int:
    cascade = boosting.load_cascade(a.cascade) if a.cascade else None
    params = lbph.LbphParams(a.grid[0], a.grid[1], a.face_size, a.face_size)
    report = evaluation.evaluate(cascade, a.dataset, params, split=a.split, seed=a.seed,
                                 n_train_per_subject=a.train_per_subject, threshold_pct=a.threshold)
    _, table = evaluation.report_emit(report, a.out)
    sys.stdout.write(table.read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_synth(a) -> int:
    rng = np.random.default_rng(a.seed)
    out = Path(a.out)
    if a.kind == "faces":
        synthetic.write_face_dataset(out, a.subjects, a.count, seed=a.seed)
    elif a.kind == "windows":
        (out / "pos").mkdir(parents=True, exist_ok=True)
        (out / "neg").mkdir(parents=True, exist_ok=True)
        for i, w in enumerate(synthetic.face_windows(a.count, rng)):
            save_image(w, out / "pos" / f"{i:05d}.pgm")
        for i in range(max(1, a.count // 4)):
            ident = synthetic.make_identity(int(rng.integers(1, 1000)), seed=int(rng.integers(1 << 30)))
            frame, face = synthetic.random_frame(160, 120, ident, rng, min_face=28)
            frame[face.y:face.y + face.h, face.x:face.x + face.w] = synthetic.render_background(
                face.w, face.h, rng)
            save_image(frame, out / "neg" / f"{i:05d}.pgm")
        # windows around faces that are not faces themselves
        hard = np.concatenate([synthetic.frame_negatives(10 * a.count, rng),
                               synthetic.negative_windows(5 * a.count, rng)])
        for i, w in enumerate(hard):
            save_image(w, out / "neg" / f"w{i:06d}.pgm")
    else:
        out.mkdir(parents=True, exist_ok=True)
        ident = synthetic.make_identity(a.subject, seed=a.seed)
        for i in range(a.count):
            frame, _ = synthetic.random_frame(160, 120, ident, rng, min_face=40, max_face=100)
            save_image(frame[::-1] if a.flip else frame, out / f"{i:05d}.pgm")
    return EXIT_OK


COMMANDS = {
    "enroll": cmd_enroll, "train-recognizer": cmd_train_recognizer,
    "train-cascade": cmd_train_cascade, "detect": cmd_detect, "recognize": cmd_recognize,
    "checkin": cmd_checkin, "serve": cmd_serve, "eval": cmd_eval, "synth": cmd_synth,
}

DATA_ERRORS = (OSError, ImageFormatError, lbph.ModelFormatError, boosting.CascadeFormatError,
               dataset.SourceExhaustedError, dataset.RosterError, ValueError,
               lbph.UntrainedModelError, boosting.TrainingStalledError)


def run(argv=None) -> int:
    try:
        a = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[a.command](a)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except (attendance.TransportError, attendance.RecordRejected) as e:
        print(f"facecheck: {e}", file=sys.stderr)
        return EXIT_TRANSPORT
    except DATA_ERRORS as e:
        print(f"facecheck: {e}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
