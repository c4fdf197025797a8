"""Structural fingerprint-resistance checks on an instance and its telemetry.

Five checks (C1-C5) stand in for camouflage: a surface that fails any of
them is cheap for an attacker to recognise as synthetic. Thresholds live in
:class:`AuditConfig` and are tunable.
"""

from __future__ import annotations

import enum
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

from camosim.envmodel import EnvironmentInstance, HostRole
from camosim.telemetry import FlowRecord, LogRecord, TelemetryEvent

_DAY = 86400

# placeholder text and stock honeypot banners
DEFAULT_MARKERS = (
    "${", "{{", "changeme", "change_me", "lorem ipsum", "placeholder", "todo", "fixme",
    "example.com", "example.org", "example.net", "your company", "acme corp", "xxx",
    "honeypot", "honeyd", "kippo", "cowrie", "dionaea",
    "ssh-2.0-openssh_5.1p1 debian-5",
)


class Verdict(str, enum.Enum):
    PASS = "Pass"
    FAIL = "Fail"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class AuditConfig:
    diurnal_ratio: float = 4.0
    markers: tuple[str, ...] = DEFAULT_MARKERS


@dataclass(frozen=True)
class FingerprintCheck:
    id: str
    description: str
    verdict: Verdict
    evidence: str

    def to_dict(self) -> dict:
        return {"id": self.id, "description": self.description, "verdict": self.verdict.value,
                "evidence": self.evidence}


@dataclass(frozen=True)
class AuditReport:
    checks: tuple[FingerprintCheck, ...] = field(default_factory=tuple)

    @property
    def verdict(self) -> Verdict:
        return Verdict.FAIL if any(c.verdict is Verdict.FAIL for c in self.checks) else Verdict.PASS

    def check(self, cid: str) -> FingerprintCheck:
        return next(c for c in self.checks if c.id == cid)

    def to_dict(self) -> dict:
        return {"verdict": self.verdict.value, "checks": [c.to_dict() for c in self.checks]}


def _records(telemetry: Iterable) -> list:
    return [e.record if isinstance(e, TelemetryEvent) else e for e in telemetry]


def _in_hours(t: int, windows: list[tuple[int, int]]) -> bool:
    minute = (t % _DAY) // 60
    return any(s <= minute < e for s, e in windows)


def _diurnal(instance, records, cfg) -> FingerprintCheck:
    desc = f"flow volume inside working hours >= {cfg.diurnal_ratio:g}x volume outside"
    windows = [p.working_hours for p in instance.personas]
    flows = [r for r in records if isinstance(r, FlowRecord)]
    inside = sum(r.bytes for r in flows if _in_hours(r.start, windows))
    outside = sum(r.bytes for r in flows if not _in_hours(r.start, windows))
    evidence = f"inside={inside} bytes, outside={outside} bytes"
    if not windows or inside + outside == 0:
        return FingerprintCheck("C1", desc, Verdict.INDETERMINATE, evidence + " (no flows or no personas)")
    ok = inside >= cfg.diurnal_ratio * outside
    return FingerprintCheck("C1", desc, Verdict.PASS if ok else Verdict.FAIL, evidence)


def banner_matches(banner: str, version: str) -> bool:
    if not version:
        return False
    pattern = r"(?<![0-9A-Za-z.])" + re.escape(version) + r"(?![0-9A-Za-z]|\.[0-9])"
    return re.search(pattern, banner) is not None


def _banners(instance) -> FingerprintCheck:
    desc = "every service banner carries its version label"
    if not instance.services:
        return FingerprintCheck("C2", desc, Verdict.INDETERMINATE, "no services")
    bad = [f"{s.host}:{s.port} banner {s.banner!r} lacks {s.version_label!r}"
           for s in instance.services if not banner_matches(s.banner, s.version_label)]
    if bad:
        return FingerprintCheck("C2", desc, Verdict.FAIL, "; ".join(bad))
    return FingerprintCheck("C2", desc, Verdict.PASS, f"{len(instance.services)} banners consistent")


def _workstation_personas(instance):
    roles = {h.hostname: h.role for h in instance.hosts}
    return [p for p in instance.personas if roles.get(p.host) is HostRole.WORKSTATION]


def _diversity(instance) -> FingerprintCheck:
    desc = "at least two distinct application sets among workstation personas"
    personas = _workstation_personas(instance)
    if len(personas) < 2:
        return FingerprintCheck("C3", desc, Verdict.INDETERMINATE, f"{len(personas)} workstation persona(s)")
    distinct = len({p.app_set for p in personas})
    verdict = Verdict.PASS if distinct >= 2 else Verdict.FAIL
    return FingerprintCheck("C3", desc, verdict, f"{distinct} distinct app sets over {len(personas)} personas")


def _jitter(instance, records) -> FingerprintCheck:
    desc = "inter-event gaps within each persona workstation stream are not all equal"
    hosts = {p.host for p in _workstation_personas(instance)}
    addr = {h.address: h.hostname for h in instance.hosts if h.hostname in hosts}
    times: dict[str, list[int]] = defaultdict(list)
    for r in records:
        if isinstance(r, FlowRecord) and r.src in addr:
            times[addr[r.src]].append(r.start)
        elif isinstance(r, LogRecord) and r.host in hosts and r.source == "application":
            times[r.host].append(r.time)
    judged, constant = [], []
    for host in sorted(times):
        ts = sorted(times[host])
        gaps = [b - a for a, b in zip(ts, ts[1:])]
        if len(gaps) < 2:
            continue
        judged.append(host)
        if len(set(gaps)) == 1:
            constant.append(f"{host} (every gap {gaps[0]} s)")
    if not judged:
        return FingerprintCheck("C4", desc, Verdict.INDETERMINATE, "no persona stream with three or more events")
    if constant:
        return FingerprintCheck("C4", desc, Verdict.FAIL, "constant spacing: " + ", ".join(constant))
    return FingerprintCheck("C4", desc, Verdict.PASS, f"{len(judged)} stream(s) show jitter")


def _markers(instance, cfg) -> FingerprintCheck:
    desc = "no placeholder or stock honeypot strings in banners or business metadata"
    texts = [(f"banner {s.host}:{s.port}", s.banner) for s in instance.services]
    texts += [("metadata", t) for t in instance.metadata.strings() if t]
    hits = []
    for where, text in texts:
        low = text.lower()
        for marker in cfg.markers:
            if marker in low:
                hits.append(f"{where} contains {marker!r}")
    if hits:
        return FingerprintCheck("C5", desc, Verdict.FAIL, "; ".join(hits))
    return FingerprintCheck("C5", desc, Verdict.PASS, f"{len(texts)} strings clean")


def audit(instance: EnvironmentInstance, telemetry: Iterable, config: AuditConfig | None = None) -> AuditReport:
    cfg = config or AuditConfig()
    records = _records(telemetry)
    return AuditReport((
        _diurnal(instance, records, cfg),
        _banners(instance),
        _diversity(instance),
        _jitter(instance, records),
        _markers(instance, cfg),
    ))
