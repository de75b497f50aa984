"""Multipart upload of check-in records to the attendance service."""

from __future__ import annotations

import json
import logging
import time

import requests

from .store import AttendanceRecord

log = logging.getLogger(__name__)


class TransportError(RuntimeError):
    """The server could not be reached after all retries."""


class RecordRejected(RuntimeError):
    """The server refused the record (4xx); retrying will not help."""

    def __init__(self, status: int, message: str):
        super().__init__(f"server rejected record ({status}): {message}")
        self.status = status
        self.message = message


def _meta(record: AttendanceRecord | dict) -> dict:
    return record.to_dict() if isinstance(record, AttendanceRecord) else dict(record)


def submit_record(server_url: str, record: AttendanceRecord | dict, image_bytes: bytes,
                  attempts: int = 3, backoff_s: float = 1.0, timeout_s: float = 10.0,
                  sleep=time.sleep, session: requests.Session | None = None) -> dict:
    """POST one record; returns the server ack ``{"status", "record_id"}``.

    Connection failures and 5xx responses are retried up to ``attempts``
    times with doubling backoff; a 4xx raises :class:`RecordRejected`.
    """
    url = server_url.rstrip("/") + "/api/v1/attendance"
    files = {
        "meta": (None, json.dumps(_meta(record)), "application/json"),
        "image": ("image.pgm", bytes(image_bytes), "application/octet-stream"),
    }
    http = session or requests
    delay = backoff_s
    last: Exception | None = None
    for attempt in range(1, attempts + 1):
        try:
            resp = http.post(url, files=files, timeout=timeout_s)
        except (requests.ConnectionError, requests.Timeout) as e:
            last = e
            log.warning("upload attempt %d/%d failed: %s", attempt, attempts, e)
        else:
            if 400 <= resp.status_code < 500:
                try:
                    msg = resp.json().get("message", resp.text)
                except ValueError:
                    msg = resp.text
                raise RecordRejected(resp.status_code, msg)
            if resp.status_code >= 500:
                last = RuntimeError(f"server error {resp.status_code}")
                log.warning("upload attempt %d/%d: server error %d", attempt, attempts,
                            resp.status_code)
            else:
                return resp.json()
        if attempt < attempts:
            sleep(delay)
            delay *= 2
    raise TransportError(f"could not deliver record to {url} after {attempts} attempts: {last}")
