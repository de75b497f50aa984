"""HTTP service: record upload, history queries and stored images."""

from __future__ import annotations

import json
import logging
import re
import threading
from datetime import date
from email.parser import BytesParser
from email.policy import HTTP
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlsplit

from ..imaging import ImageFormatError, decode_pnm
from .store import AttendanceStore, QueryRange, parse_timestamp

log = logging.getLogger(__name__)

API = "/api/v1/attendance"
_IMAGE_PATH = re.compile(r"^/api/v1/attendance/(\d+)/image$")
META_FIELDS = {"subject_label": int, "subject_name": str, "timestamp": str,
               "confidence_pct": (int, float), "device_location": str}


class BadRequest(ValueError):
    pass


def parse_multipart(content_type: str, body: bytes) -> dict[str, bytes]:
    """Part name -> payload for a multipart/form-data body."""
    if not content_type.lower().startswith("multipart/form-data"):
        raise BadRequest("expected multipart/form-data")
    msg = BytesParser(policy=HTTP).parsebytes(
        b"Content-Type: " + content_type.encode("latin-1") + b"\r\n\r\n" + body)
    if not msg.is_multipart():
        raise BadRequest("malformed multipart body")
    parts = {}
    for part in msg.iter_parts():
        name = part.get_param("name", header="content-disposition")
        if name:
            parts[name] = part.get_payload(decode=True) or b""
    return parts


def parse_meta(raw: bytes) -> dict:
    try:
        meta = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise BadRequest(f"meta is not valid JSON: {e}") from None
    if not isinstance(meta, dict):
        raise BadRequest("meta must be a JSON object")
    for key, typ in META_FIELDS.items():
        if key not in meta:
            raise BadRequest(f"meta is missing {key}")
        v = meta[key]
        if isinstance(v, bool) or not isinstance(v, typ):
            raise BadRequest(f"meta field {key} has the wrong type")
    if meta["subject_label"] < 1:
        raise BadRequest("subject_label must be positive")
    if not 0 <= meta["confidence_pct"] <= 100:
        raise BadRequest("confidence_pct must be within [0, 100]")
    try:
        parse_timestamp(meta["timestamp"])
    except ValueError:
        raise BadRequest("timestamp must be YYYY-MM-DDThh:mm:ssZ") from None
    return meta


def parse_range(query: str) -> QueryRange:
    q = parse_qs(query, keep_blank_values=True)

    def one(key):
        vals = q.get(key)
        return vals[-1] if vals else None

    try:
        lo = date.fromisoformat(one("from") or "")
        hi = date.fromisoformat(one("to") or "")
    except ValueError:
        raise BadRequest("from and to must be YYYY-MM-DD dates") from None
    subject = one("subject")
    if subject is not None:
        if not subject.isdigit() or int(subject) < 1:
            raise BadRequest("subject must be a positive integer")
        subject = int(subject)
    if lo > hi:
        raise BadRequest("from must not be after to")
    return QueryRange(lo, hi, subject)


class _Handler(BaseHTTPRequestHandler):
    server_version = "facecheck/1"
    protocol_version = "HTTP/1.1"

    @property
    def app(self) -> "AttendanceServer":
        return self.server.app

    def log_message(self, fmt, *args):
        log.info("%s %s", self.address_string(), fmt % args)

    def _send(self, code: int, body: bytes, ctype: str = "application/json") -> None:
        self.send_response(code)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _json(self, code: int, obj) -> None:
        self._send(code, json.dumps(obj).encode("utf-8"))

    def _error(self, code: int, message: str) -> None:
        self._json(code, {"status": "error", "message": message})

    def do_GET(self):
        url = urlsplit(self.path)
        if url.path == "/healthz":
            return self._json(200, {"status": "ok"})
        if url.path == API:
            try:
                q = parse_range(url.query)
            except BadRequest as e:
                return self._error(400, str(e))
            return self._json(200, [r.to_dict() for r in self.app.store.query(q)])
        m = _IMAGE_PATH.match(url.path)
        if m:
            path = self.app.store.image_path(int(m.group(1)))
            try:
                data = path.read_bytes()
            except FileNotFoundError:
                return self._error(404, f"no image for record {m.group(1)}")
            return self._send(200, data, "application/octet-stream")
        self._error(404, "not found")

    def do_POST(self):
        if urlsplit(self.path).path != API:
            return self._error(404, "not found")
        try:
            length = int(self.headers.get("Content-Length", ""))
        except ValueError:
            return self._error(411, "Content-Length required")
        if length > self.app.max_body:
            return self._error(413, "request body too large")
        body = self.rfile.read(length)
        try:
            parts = parse_multipart(self.headers.get("Content-Type", ""), body)
            if "meta" not in parts:
                raise BadRequest("missing part 'meta'")
            if "image" not in parts:
                raise BadRequest("missing part 'image'")
            meta = parse_meta(parts["meta"])
            try:
                decode_pnm(parts["image"])
            except ImageFormatError as e:
                raise BadRequest(f"image is not a valid PGM/PPM: {e}") from None
        except BadRequest as e:
            return self._error(400, str(e))
        try:
            rec, created = self.app.store.append(
                meta["subject_label"], meta["subject_name"], meta["timestamp"],
                float(meta["confidence_pct"]), meta["device_location"], parts["image"],
                cooldown_seconds=self.app.cooldown_seconds)
        except OSError as e:
            log.error("store write failed: %s", e)
            return self._error(500, "store write failed")
        if created:
            return self._json(201, {"status": "ok", "record_id": rec.record_id})
        self._json(200, {"status": "duplicate", "record_id": rec.record_id})


def parse_bind(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"bind address must be HOST:PORT, got {addr!r}")
    return host or "0.0.0.0", int(port)


class AttendanceServer:
    """The record service bound to one store directory."""

    def __init__(self, store_dir, bind_addr: str = "127.0.0.1:8080", cooldown_seconds: float = 300,
                 retention_days: int | None = None, max_body: int = 16 << 20):
        self.store = AttendanceStore(Path(store_dir), retention_days=retention_days)
        self.cooldown_seconds = cooldown_seconds
        self.max_body = max_body
        self.httpd = ThreadingHTTPServer(parse_bind(bind_addr), _Handler)
        self.httpd.daemon_threads = True
        self.httpd.app = self
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        if host in ("0.0.0.0", ""):
            host = "127.0.0.1"
        return f"http://{host}:{port}"

    def start(self) -> "AttendanceServer":
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def stop(self) -> None:
        # shutdown() blocks until serve_forever returns, so only call it when running
        if self._thread is not None:
            self.httpd.shutdown()
            self._thread.join()
            self._thread = None
        self.httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve(store_dir, bind_addr: str, **kw) -> AttendanceServer:
    """Start the service in a background thread and return it."""
    return AttendanceServer(store_dir, bind_addr, **kw).start()
