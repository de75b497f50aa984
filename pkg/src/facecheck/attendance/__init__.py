from .checkin import DEFAULT_COOLDOWN_S, NoFaceError, RemoteStore, check_in
from .client import RecordRejected, TransportError, submit_record
from .server import AttendanceServer, parse_bind, serve
from .store import (AttendanceRecord, AttendanceStore, QueryRange, format_timestamp,
                    parse_timestamp, query_history, store_append, store_scan)

__all__ = [
    "AttendanceRecord", "AttendanceServer", "AttendanceStore", "DEFAULT_COOLDOWN_S",
    "NoFaceError", "QueryRange", "RecordRejected", "RemoteStore", "TransportError",
    "check_in", "format_timestamp", "parse_bind", "parse_timestamp", "query_history", "serve",
    "store_append", "store_scan", "submit_record",
]
