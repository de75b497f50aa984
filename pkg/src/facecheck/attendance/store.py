"""Append-only attendance log with a flat image directory.

Layout under the store root::

    records.jsonl       one JSON object per line, append-only
    images/<id>.pgm     check-in face chips
    next_id             id high-water mark, written only when pruning

Readers only ever trust newline-terminated lines; a torn final line (a crash
mid-append) is dropped with a warning and truncated away when a writer opens
the store.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import asdict, dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from ..imaging import encode_pnm

log = logging.getLogger(__name__)

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
RECORD_FIELDS = ("record_id", "subject_label", "subject_name", "timestamp",
                 "confidence_pct", "device_location", "image_ref")


def utcnow() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


def format_timestamp(t: datetime) -> str:
    if t.tzinfo is not None:
        t = t.astimezone(timezone.utc)
    return t.strftime(TIMESTAMP_FORMAT)


def parse_timestamp(s: str) -> datetime:
    return datetime.strptime(s, TIMESTAMP_FORMAT).replace(tzinfo=timezone.utc)


@dataclass(frozen=True)
class AttendanceRecord:
    record_id: int
    subject_label: int
    subject_name: str
    timestamp: str
    confidence_pct: float
    device_location: str
    image_ref: str

    @property
    def time(self) -> datetime:
        return parse_timestamp(self.timestamp)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AttendanceRecord":
        missing = [k for k in RECORD_FIELDS if k not in d]
        if missing:
            raise ValueError(f"record is missing {', '.join(missing)}")
        rec = cls(int(d["record_id"]), int(d["subject_label"]), str(d["subject_name"]),
                  str(d["timestamp"]), float(d["confidence_pct"]), str(d["device_location"]),
                  str(d["image_ref"]))
        parse_timestamp(rec.timestamp)
        if rec.record_id < 1 or rec.subject_label < 1:
            raise ValueError("record_id and subject_label must be positive")
        if not 0.0 <= rec.confidence_pct <= 100.0:
            raise ValueError("confidence_pct must be within [0, 100]")
        return rec


@dataclass(frozen=True)
class QueryRange:
    from_date: date
    to_date: date
    subject_label: int | None = None

    def __post_init__(self):
        if self.from_date > self.to_date:
            raise ValueError("from_date must not be after to_date")


def _read_lines(path: Path) -> tuple[list[AttendanceRecord], int]:
    """Records from complete lines, and the byte length of the clean prefix."""
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        return [], 0
    end = data.rfind(b"\n") + 1
    if end < len(data):
        log.warning("%s: dropping torn final line (%d bytes)", path, len(data) - end)
    records = []
    for n, line in enumerate(data[:end].splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(AttendanceRecord.from_dict(json.loads(line)))
        except (ValueError, TypeError) as e:
            log.warning("%s:%d: skipping unreadable record (%s)", path, n, e)
    return records, end


class AttendanceStore:
    def __init__(self, root, retention_days: int | None = None, now: datetime | None = None):
        self.root = Path(root)
        self.images = self.root / "images"
        self.images.mkdir(parents=True, exist_ok=True)
        self.log_path = self.root / "records.jsonl"
        self._lock = threading.Lock()
        records, clean = _read_lines(self.log_path)
        if self.log_path.exists() and self.log_path.stat().st_size > clean:
            with open(self.log_path, "r+b") as f:
                f.truncate(clean)
        self._next_id = max([r.record_id for r in records] + [self._hint() - 1, 0]) + 1
        self._last: dict[int, datetime] = {}
        for r in records:
            self._note(r)
        if retention_days is not None:
            self.prune(retention_days, now or utcnow())

    def _hint(self) -> int:
        try:
            return int((self.root / "next_id").read_text().strip())
        except (FileNotFoundError, ValueError):
            return 0

    def _note(self, r: AttendanceRecord) -> None:
        t = r.time
        if r.subject_label not in self._last or t > self._last[r.subject_label]:
            self._last[r.subject_label] = t

    def scan(self) -> list[AttendanceRecord]:
        return _read_lines(self.log_path)[0]

    def last_check_in(self, label: int) -> datetime | None:
        with self._lock:
            return self._last.get(label)

    def image_path(self, record_id: int) -> Path:
        return self.images / f"{int(record_id)}.pgm"

    def append(self, subject_label: int, subject_name: str, timestamp: str,
               confidence_pct: float, device_location: str, image,
               cooldown_seconds: float = 0) -> tuple[AttendanceRecord, bool]:
        """Store one check-in; returns (record, created).

        When the subject already has a record less than ``cooldown_seconds``
        before ``timestamp``, nothing is written and that record is returned
        with ``created`` False.
        """
        t = parse_timestamp(timestamp)
        payload = image if isinstance(image, (bytes, bytearray)) else encode_pnm(np.asarray(image))
        with self._lock:
            last = self._last.get(subject_label)
            if last is not None and cooldown_seconds > 0 and \
                    timedelta(0) <= t - last < timedelta(seconds=cooldown_seconds):
                prev = max((r for r in self.scan() if r.subject_label == subject_label
                            and r.time == last), key=lambda r: r.record_id)
                return prev, False
            rid = self._next_id
            ref = f"images/{rid}.pgm"
            tmp = self.images / f".{rid}.pgm.tmp"
            tmp.write_bytes(bytes(payload))
            os.replace(tmp, self.root / ref)
            rec = AttendanceRecord(rid, int(subject_label), subject_name, format_timestamp(t),
                                   float(confidence_pct), device_location, ref)
            line = (json.dumps(rec.to_dict(), sort_keys=False) + "\n").encode("utf-8")
            fd = os.open(self.log_path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
            try:
                os.write(fd, line)
                os.fsync(fd)
            finally:
                os.close(fd)
            self._next_id = rid + 1
            self._note(rec)
            return rec, True

    def query(self, q: QueryRange) -> list[AttendanceRecord]:
        out = [r for r in self.scan()
               if q.from_date <= r.time.date() <= q.to_date
               and (q.subject_label is None or r.subject_label == q.subject_label)]
        return sorted(out, key=lambda r: (r.time, r.record_id))

    def prune(self, retention_days: int, now: datetime) -> int:
        """Drop records older than the retention window; returns how many were removed."""
        cutoff = now - timedelta(days=retention_days)
        with self._lock:
            records = self.scan()
            keep = [r for r in records if r.time >= cutoff]
            gone = [r for r in records if r.time < cutoff]
            if not gone:
                return 0
            (self.root / "next_id").write_text(f"{self._next_id}\n")
            tmp = self.log_path.with_name(".records.jsonl.tmp")
            tmp.write_text("".join(json.dumps(r.to_dict()) + "\n" for r in keep), encoding="utf-8")
            os.replace(tmp, self.log_path)
            for r in gone:
                (self.root / r.image_ref).unlink(missing_ok=True)
            self._last = {}
            for r in keep:
                self._note(r)
            log.info("pruned %d records older than %d days", len(gone), retention_days)
            return len(gone)


def store_append(store: AttendanceStore, record: AttendanceRecord, image) -> AttendanceRecord:
    """Append ``record`` (its id and image_ref are reassigned by the store)."""
    rec, _ = store.append(record.subject_label, record.subject_name, record.timestamp,
                          record.confidence_pct, record.device_location, image)
    return rec


def store_scan(store: AttendanceStore) -> list[AttendanceRecord]:
    return store.scan()


def query_history(store: AttendanceStore, q: QueryRange) -> list[AttendanceRecord]:
    return store.query(q)
