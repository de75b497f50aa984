"""Check-in pipeline: detect, recognize, then record an accepted subject once per cooldown."""

from __future__ import annotations

import logging
from datetime import datetime, timedelta

from ..boosting import Cascade
from ..dataset import face_chip
from ..detector import DetectParams
from ..imaging import encode_pnm
from ..lbph import DEFAULT_THRESHOLD, LbphModel, predict
from .client import submit_record
from .store import AttendanceRecord, format_timestamp, utcnow

log = logging.getLogger(__name__)

DEFAULT_COOLDOWN_S = 300


class NoFaceError(LookupError):
    """The frame contained no detectable face."""


class RemoteStore:
    """Store adapter that uploads records to an attendance service."""

    def __init__(self, server_url: str, **submit_kw):
        self.server_url = server_url
        self.submit_kw = submit_kw
        self._last: dict[int, datetime] = {}

    def last_check_in(self, label: int) -> datetime | None:
        return self._last.get(label)

    def append(self, subject_label, subject_name, timestamp, confidence_pct, device_location,
               image, cooldown_seconds: float = 0):
        payload = image if isinstance(image, (bytes, bytearray)) else encode_pnm(image)
        meta = {"record_id": 0, "subject_label": int(subject_label), "subject_name": subject_name,
                "timestamp": timestamp, "confidence_pct": float(confidence_pct),
                "device_location": device_location, "image_ref": ""}
        ack = submit_record(self.server_url, meta, payload, **self.submit_kw)
        rid = int(ack["record_id"])
        rec = AttendanceRecord(rid, int(subject_label), subject_name, timestamp,
                               float(confidence_pct), device_location, f"images/{rid}.pgm")
        created = ack.get("status") == "ok"
        if created:
            self._last[rec.subject_label] = rec.time
        return rec, created


def check_in(cascade: Cascade, model: LbphModel, frame, device_location: str,
             threshold_pct: float = DEFAULT_THRESHOLD, store=None,
             cooldown_seconds: float = DEFAULT_COOLDOWN_S, now: datetime | None = None,
             params: DetectParams | None = None, flip: bool = True) -> AttendanceRecord | None:
    """Record the largest face in ``frame`` if it is recognized.

    Returns the new record, or None when the face is rejected as unknown or
    the subject already checked in within ``cooldown_seconds``. Raises
    :class:`NoFaceError` when nothing is detected. Nothing is written unless
    a record is returned.
    """
    p = model.params
    chip, _ = face_chip(cascade, frame, (p.face_w, p.face_h), params, flip)
    if chip is None:
        raise NoFaceError("no face detected")
    pred = predict(model, chip, threshold_pct)
    if not pred.accepted:
        log.info("rejected: nearest %d at %.1f%%", pred.nearest_label, pred.confidence_pct)
        return None
    t = (now or utcnow()).replace(microsecond=0)
    last = store.last_check_in(pred.label)
    if last is not None and timedelta(0) <= t - last < timedelta(seconds=cooldown_seconds):
        log.info("subject %d already checked in at %s", pred.label, format_timestamp(last))
        return None
    rec, created = store.append(pred.label, model.name_of(pred.label), format_timestamp(t),
                                pred.confidence_pct, device_location, chip,
                                cooldown_seconds=cooldown_seconds)
    return rec if created else None
