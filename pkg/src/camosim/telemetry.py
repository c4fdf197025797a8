"""Typed telemetry records, the append-only run stream, and JSONL persistence.

Every event carries a ground-truth ``actor`` tag (``system``,
``persona:<name>`` or ``attacker:<scenario>``). The tag is experiment
scaffolding for scoring; a real deployment has no such field, and the
detection code never reads it.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Union

from camosim.errors import ParseError, RunClosed, TelemetryIOError

SCHEMA_VERSION = 1

LOG_SOURCES = ("system", "application", "service", "perimeter")
SEVERITIES = ("info", "warning", "error")
PERIMETER_HOST = "perimeter"

# allowed template ids per (host role, source)
LOG_TEMPLATES: dict[tuple[str, str], frozenset[str]] = {
    ("workstation", "system"): frozenset({"sys.heartbeat", "fs.modify"}),
    ("server", "system"): frozenset({"sys.heartbeat", "fs.modify"}),
    ("workstation", "application"): frozenset({"app.launch", "mail.send"}),
    ("server", "service"): frozenset({"http.access", "svc.fault", "svc.exploit_failed",
                                      "svc.state", "svc.admin_session"}),
    ("perimeter", "perimeter"): frozenset({"fw.deny"}),
}


def template_registered(role: str, source: str, template: str) -> bool:
    return template in LOG_TEMPLATES.get((role, source), ())


@dataclass(frozen=True)
class FlowRecord:
    start: int
    end: int
    src: str
    dst: str
    port: int
    protocol_label: str
    bytes: int
    initiator: str

    @property
    def time(self) -> int:
        return self.start

    @property
    def host(self) -> str:
        return self.src


@dataclass(frozen=True)
class LogRecord:
    time: int
    host: str
    source: str
    template: str
    args: dict[str, Any] = field(default_factory=dict)
    severity: str = "info"


@dataclass(frozen=True)
class SnapshotManifest:
    time: int
    host: str
    files: dict[str, str]


@dataclass(frozen=True)
class IntegrityFlag:
    time: int
    host: str
    path: str
    old_digest: str | None
    new_digest: str
    anticipated: bool = False


Record = Union[FlowRecord, LogRecord, SnapshotManifest, IntegrityFlag]


@dataclass(frozen=True)
class TelemetryEvent:
    seq: int
    actor: str
    record: Record

    @property
    def time(self) -> int:
        return self.record.time

    @property
    def host(self) -> str:
        return self.record.host


class TelemetryStream:
    """Append-only event log for one run."""

    def __init__(self, events: Iterable[TelemetryEvent] = ()):
        self._events: list[TelemetryEvent] = list(events)
        self.closed = False

    def emit(self, record: Record, actor: str) -> int:
        if self.closed:
            raise RunClosed("cannot emit into a closed run")
        pos = len(self._events)
        self._events.append(TelemetryEvent(pos, actor, record))
        return pos

    def close(self) -> None:
        self.closed = True

    def __iter__(self) -> Iterator[TelemetryEvent]:
        return iter(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def __getitem__(self, i):
        return self._events[i]

    def __eq__(self, other) -> bool:
        if isinstance(other, TelemetryStream):
            return self._events == other._events
        return NotImplemented

    @property
    def events(self) -> list[TelemetryEvent]:
        return list(self._events)

    def records(self, kind: type) -> list:
        return [e.record for e in self._events if isinstance(e.record, kind)]


# --------------------------------------------------------------------------
# codec

_FIELDS = {
    "flow": {"start", "end", "src", "dst", "port", "protocol", "bytes", "initiator"},
    "log": {"time", "host", "source", "template", "args", "severity"},
    "snapshot": {"time", "host", "files"},
    "flag": {"time", "host", "path", "old", "new", "anticipated"},
}
_ENVELOPE = {"v", "seq", "actor", "type"}


def record_to_dict(record: Record) -> dict[str, Any]:
    if isinstance(record, FlowRecord):
        return {"type": "flow", "start": record.start, "end": record.end, "src": record.src,
                "dst": record.dst, "port": record.port, "protocol": record.protocol_label,
                "bytes": record.bytes, "initiator": record.initiator}
    if isinstance(record, LogRecord):
        return {"type": "log", "time": record.time, "host": record.host, "source": record.source,
                "template": record.template, "args": dict(record.args), "severity": record.severity}
    if isinstance(record, SnapshotManifest):
        return {"type": "snapshot", "time": record.time, "host": record.host, "files": dict(record.files)}
    if isinstance(record, IntegrityFlag):
        return {"type": "flag", "time": record.time, "host": record.host, "path": record.path,
                "old": record.old_digest, "new": record.new_digest, "anticipated": record.anticipated}
    raise TypeError(f"not a telemetry record: {record!r}")


def event_to_dict(event: TelemetryEvent) -> dict[str, Any]:
    return {"v": SCHEMA_VERSION, "seq": event.seq, "actor": event.actor, **record_to_dict(event.record)}


def dumps_event(event: TelemetryEvent) -> str:
    return json.dumps(event_to_dict(event), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _int(d, key, index):
    v = d[key]
    if not isinstance(v, int) or isinstance(v, bool):
        raise ParseError(f"field {key!r} must be an integer", index=index)
    return v


def _str(d, key, index, nullable=False):
    v = d[key]
    if v is None and nullable:
        return None
    if not isinstance(v, str):
        raise ParseError(f"field {key!r} must be a string", index=index)
    return v


def event_from_dict(d: Any, index: int = 0) -> TelemetryEvent:
    if not isinstance(d, dict):
        raise ParseError("record is not an object", index=index)
    kind = d.get("type")
    if kind not in _FIELDS:
        raise ParseError(f"unknown record type {kind!r}", index=index)
    expected = _ENVELOPE | _FIELDS[kind]
    unknown = set(d) - expected
    missing = expected - set(d)
    if unknown:
        raise ParseError(f"unknown fields {sorted(unknown)}", index=index)
    if missing:
        raise ParseError(f"missing fields {sorted(missing)}", index=index)
    if d["v"] != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema version {d['v']!r}", index=index)
    seq = _int(d, "seq", index)
    actor = _str(d, "actor", index)
    if kind == "flow":
        rec: Record = FlowRecord(_int(d, "start", index), _int(d, "end", index), _str(d, "src", index),
                                 _str(d, "dst", index), _int(d, "port", index), _str(d, "protocol", index),
                                 _int(d, "bytes", index), _str(d, "initiator", index))
        if rec.start > rec.end or rec.bytes < 0:
            raise ParseError("flow violates start <= end or bytes >= 0", index=index)
    elif kind == "log":
        if not isinstance(d["args"], dict):
            raise ParseError("field 'args' must be an object", index=index)
        source, severity = _str(d, "source", index), _str(d, "severity", index)
        if source not in LOG_SOURCES or severity not in SEVERITIES:
            raise ParseError("invalid log source or severity", index=index)
        rec = LogRecord(_int(d, "time", index), _str(d, "host", index), source,
                        _str(d, "template", index), d["args"], severity)
    elif kind == "snapshot":
        files = d["files"]
        if not isinstance(files, dict) or not all(isinstance(v, str) for v in files.values()):
            raise ParseError("field 'files' must map paths to digests", index=index)
        rec = SnapshotManifest(_int(d, "time", index), _str(d, "host", index), files)
    else:
        if not isinstance(d["anticipated"], bool):
            raise ParseError("field 'anticipated' must be a boolean", index=index)
        rec = IntegrityFlag(_int(d, "time", index), _str(d, "host", index), _str(d, "path", index),
                            _str(d, "old", index, nullable=True), _str(d, "new", index), d["anticipated"])
    return TelemetryEvent(seq, actor, rec)


def parse_line(line: str | bytes, index: int) -> TelemetryEvent:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError("record is not valid UTF-8", index=index) from None
    try:
        data = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", index=index) from None
    return event_from_dict(data, index)


def export(stream: Iterable[TelemetryEvent], path: str | os.PathLike) -> int:
    """Write one JSON record per line; returns the record count."""
    n = 0
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for event in stream:
                fh.write(dumps_event(event) + "\n")
                n += 1
    except OSError as exc:
        raise TelemetryIOError(str(exc)) from exc
    return n


def load(path: str | os.PathLike) -> TelemetryStream:
    """Load an exported stream. Raises ParseError at the first bad record."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise TelemetryIOError(str(exc)) from exc
    if data and not data.endswith(b"\n"):
        # a missing final newline means the writer was cut off mid-record
        last = data.count(b"\n")
        lines = data.split(b"\n")
        for i, line in enumerate(lines[:-1]):
            parse_line(line, i)
        raise ParseError("truncated record (no line terminator)", index=last)
    events = [parse_line(line, i) for i, line in enumerate(data.split(b"\n")[:-1])]
    stream = TelemetryStream(events)
    stream.close()
    return stream


def load_lenient(path: str | os.PathLike) -> tuple[list[TelemetryEvent], list[ParseError]]:
    """Load every parseable record, collecting errors instead of stopping."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise TelemetryIOError(str(exc)) from exc
    events, errors = [], []
    for i, line in enumerate(data.splitlines()):
        try:
            events.append(parse_line(line, i))
        except ParseError as exc:
            errors.append(exc)
    return events, errors


def _host_key(event: TelemetryEvent) -> str:
    return event.host


def merge_ordered(streams: Iterable[Iterable[TelemetryEvent]]) -> list[TelemetryEvent]:
    """Total order by (time, host, sequence), with the serialized record as last tie-break."""
    events = [e for s in streams for e in s]
    events.sort(key=lambda e: (e.time, _host_key(e), e.seq, dumps_event(e)))
    return events
