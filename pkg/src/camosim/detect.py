"""Whitelist-driven detection, trace reconstruction, and scoring.

``detect``, ``reconstruct_trace`` and ``identify_vector`` look only at
records and sequence numbers. ``snr`` is the one place that consumes the
ground-truth actor tags.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from camosim.attack import PROBE_PROTOCOL
from camosim.baseline import Deviation, Whitelist, check
from camosim.errors import NoTrace, ParseError
from camosim.telemetry import FlowRecord, IntegrityFlag, LogRecord, SnapshotManifest, TelemetryEvent, parse_line

EXPLOIT_TEMPLATES = frozenset({"svc.fault", "svc.exploit_failed"})


@dataclass(frozen=True)
class Anomaly:
    event: TelemetryEvent
    deviation: Deviation

    @property
    def time(self) -> int:
        return self.event.record.time


@dataclass
class AnomalySet:
    items: list[Anomaly] = field(default_factory=list)
    errors: list[ParseError] = field(default_factory=list)

    def __iter__(self):
        return iter(self.items)

    def __len__(self) -> int:
        return len(self.items)

    def __bool__(self) -> bool:
        return bool(self.items)


def detect(stream: Iterable[TelemetryEvent | str | bytes], wl: Whitelist) -> AnomalySet:
    """Every event that fails :func:`check`; unparseable lines are collected as errors."""
    result = AnomalySet()
    per_hour: Counter = Counter()
    for index, item in enumerate(stream):
        if isinstance(item, (str, bytes)):
            try:
                item = parse_line(item, index)
            except ParseError as exc:
                result.errors.append(exc)
                continue
        rec = item.record
        count = None
        if isinstance(rec, FlowRecord):
            key = (wl.pattern(rec), rec.start // 3600)
            per_hour[key] += 1
            count = per_hour[key]
        verdict = check(rec, wl, count)
        if not verdict.ok:
            result.items.append(Anomaly(item, verdict))
    return result


@dataclass(frozen=True)
class AttackTrace:
    items: tuple[Anomaly, ...] = ()

    def __iter__(self):
        return iter(self.items)

    def __len__(self) -> int:
        return len(self.items)

    @property
    def start(self) -> int | None:
        return self.items[0].time if self.items else None

    @property
    def end(self) -> int | None:
        return self.items[-1].time if self.items else None


def reconstruct_trace(anomalies: Iterable[Anomaly]) -> AttackTrace:
    return AttackTrace(tuple(sorted(anomalies, key=lambda a: a.time)))


@dataclass(frozen=True)
class VectorReport:
    entry: tuple[str, int] | None  # (host, port); None means Unknown
    vehicle: str | None  # payload id; None means Unknown

    def to_dict(self) -> dict:
        return {
            "entry": {"host": self.entry[0], "port": self.entry[1]} if self.entry else "Unknown",
            "vehicle": self.vehicle or "Unknown",
        }


def identify_vector(
    trace: AttackTrace,
    *,
    addresses: Mapping[str, str] | None = None,
    fingerprints: Mapping[str, str] | None = None,
) -> VectorReport:
    """Entry point = target of the earliest exploit-class anomaly; vehicle = known payload digest.

    ``addresses`` maps address -> hostname; ``fingerprints`` maps on-disk
    payload digest -> payload id.
    """
    if not trace.items:
        raise NoTrace("cannot identify a vector from an empty trace")
    addresses = addresses or {}
    fingerprints = fingerprints or {}
    entry = None
    vehicle = None
    for a in trace:
        rec = a.event.record
        if entry is None:
            if isinstance(rec, FlowRecord) and rec.protocol_label != PROBE_PROTOCOL and rec.dst in addresses:
                entry = (addresses[rec.dst], rec.port)
            elif isinstance(rec, LogRecord) and rec.source == "service" and rec.template in EXPLOIT_TEMPLATES:
                entry = (rec.host, int(rec.args.get("port", 0)))
        if vehicle is None:
            if isinstance(rec, IntegrityFlag) and rec.new_digest in fingerprints:
                vehicle = fingerprints[rec.new_digest]
            elif isinstance(rec, SnapshotManifest):
                hits = sorted(fingerprints[d] for d in rec.files.values() if d in fingerprints)
                vehicle = hits[0] if hits else None
    return VectorReport(entry, vehicle)


@dataclass(frozen=True)
class SNRReport:
    signal: int
    noise: int
    precision: float
    recall: float
    expected: int

    def to_dict(self) -> dict:
        return {"signal": self.signal, "noise": self.noise, "precision": self.precision,
                "recall": self.recall, "expected": self.expected}


class _NoDeviation:
    def __repr__(self) -> str:
        return "NoDeviation"

    def to_dict(self) -> dict:
        return {"result": "NoDeviation"}


NO_DEVIATION = _NoDeviation()


def is_attacker(event: TelemetryEvent) -> bool:
    return event.actor.startswith("attacker:")


def snr(anomalies: Iterable[Anomaly], stream: Iterable[TelemetryEvent]):
    """Precision and recall of ``anomalies`` against the ground-truth tags of ``stream``.

    Every attacker-caused event is expected to deviate, since no attacker
    activity reaches the baseline.
    """
    truth = {e.seq: is_attacker(e) for e in stream}
    anomalies = list(anomalies)
    expected = sum(truth.values())
    if not anomalies and expected == 0:
        return NO_DEVIATION
    flagged = {a.event.seq for a in anomalies}
    signal = sum(1 for s in flagged if truth.get(s, False))
    noise = len(flagged) - signal
    precision = signal / len(flagged) if flagged else 0.0
    recall = signal / expected if expected else 1.0
    return SNRReport(signal, noise, precision, recall, expected)
