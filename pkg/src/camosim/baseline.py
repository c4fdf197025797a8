"""Perfect-whitelist baseline, event checking, and periodic integrity scanning.

The baseline is built from an attack-free run. Because every benign state
change in the simulation is scripted, anything outside the whitelist is by
construction a deviation.
"""

from __future__ import annotations

import enum
import math
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from camosim.envmodel import EXTERNAL, EnvironmentInstance
from camosim.errors import EmptyEnvironment, ParseError, TelemetryIOError
from camosim.persona import DAY, AnticipatedChange, persona_activity
from camosim.sim import WorldState, run, snapshot
from camosim.telemetry import (
    FlowRecord,
    IntegrityFlag,
    LogRecord,
    Record,
    SnapshotManifest,
    TelemetryEvent,
    TelemetryStream,
)

DEFAULT_SCAN_PERIOD = 300
DEFAULT_RATE_SLACK = 2.0
WHITELIST_HEADER = "camosim-whitelist"
WHITELIST_VERSION = 1

FlowPattern = tuple[str, str, int, str]


class DeviationReason(str, enum.Enum):
    UNKNOWN_FLOW = "UnknownFlow"
    UNKNOWN_LOG_TEMPLATE = "UnknownLogTemplate"
    UNANTICIPATED_FILE_CHANGE = "UnanticipatedFileChange"
    RATE_EXCEEDED = "RateExceeded"


class _Pass:
    ok = True

    def __repr__(self) -> str:
        return "Pass"


PASS = _Pass()


@dataclass(frozen=True)
class Deviation:
    reason: DeviationReason
    detail: str = ""
    ok = False


@dataclass(frozen=True)
class Whitelist:
    template_id: str
    instance_id: str
    addresses: Mapping[str, str]
    flows: Mapping[FlowPattern, int]  # pattern -> max flows seen in any clock hour
    logs: frozenset[tuple[str, str, str]]
    ledger: tuple[AnticipatedChange, ...]
    snapshots: Mapping[str, Mapping[str, str]]  # initial manifests, host -> path -> digest
    period: int = DEFAULT_SCAN_PERIOD
    slack: float = DEFAULT_RATE_SLACK
    _ledger_index: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        index: dict[tuple[str, str], list[tuple[int, str]]] = defaultdict(list)
        for c in self.ledger:
            index[(c.host, c.path)].append((c.earliest_time, c.expected_new_digest))
        object.__setattr__(self, "_ledger_index", dict(index))

    def classify(self, address: str) -> str:
        return self.addresses.get(address, EXTERNAL)

    def pattern(self, flow: FlowRecord) -> FlowPattern:
        return (self.classify(flow.src), self.classify(flow.dst), flow.port, flow.protocol_label)

    def rate_bound(self, pattern: FlowPattern) -> int:
        return math.floor(self.flows[pattern] * self.slack)

    def anticipated(self, host: str, path: str, digest: str, t: int, window: int | None = None) -> bool:
        """True if a ledger entry predicts ``digest`` at ``path`` becoming visible by ``t``.

        With ``window`` the entry must also fall within ``[t - window, t]``.
        """
        for earliest, expected in self._ledger_index.get((host, path), ()):
            if expected != digest or earliest > t:
                continue
            if window is None or earliest >= t - window:
                return True
        return False


def _record(event: TelemetryEvent | Record) -> Record:
    return event.record if isinstance(event, TelemetryEvent) else event


def check(event: TelemetryEvent | Record, wl: Whitelist, hourly_count: int | None = None):
    """Return PASS or a Deviation for one event.

    ``hourly_count`` is the number of flows with this event's pattern seen in
    the current clock hour, this one included; the rate bound is only
    enforced when it is supplied.
    """
    rec = _record(event)
    if isinstance(rec, FlowRecord):
        pat = wl.pattern(rec)
        if pat not in wl.flows:
            return Deviation(DeviationReason.UNKNOWN_FLOW, "%s -> %s:%d/%s" % pat)
        if hourly_count is not None and hourly_count > wl.rate_bound(pat):
            return Deviation(DeviationReason.RATE_EXCEEDED,
                             f"{hourly_count} flows/hour > bound {wl.rate_bound(pat)}")
        return PASS
    if isinstance(rec, LogRecord):
        if (rec.host, rec.source, rec.template) not in wl.logs:
            return Deviation(DeviationReason.UNKNOWN_LOG_TEMPLATE, f"{rec.host}/{rec.source}/{rec.template}")
        return PASS
    if isinstance(rec, IntegrityFlag):
        if wl.anticipated(rec.host, rec.path, rec.new_digest, rec.time, wl.period):
            return PASS
        return Deviation(DeviationReason.UNANTICIPATED_FILE_CHANGE, f"{rec.host}:{rec.path}")
    if isinstance(rec, SnapshotManifest):
        initial = wl.snapshots.get(rec.host, {})
        for path, digest in sorted(rec.files.items()):
            if initial.get(path) == digest or wl.anticipated(rec.host, path, digest, rec.time):
                continue
            return Deviation(DeviationReason.UNANTICIPATED_FILE_CHANGE, f"{rec.host}:{path}")
        return PASS
    raise TypeError(f"not a telemetry record: {rec!r}")


# --------------------------------------------------------------------------
# integrity scanning


def integrity_scan(
    world: WorldState,
    t: int,
    wl: Whitelist,
    period: int,
    previous: Mapping[str, Mapping[str, str]],
) -> tuple[list[IntegrityFlag], dict[str, SnapshotManifest]]:
    """Compare current digests with the previous scan.

    Returns one flag per changed file that no ledger entry anticipates, and
    the manifests of hosts whose files changed at all.
    """
    flags: list[IntegrityFlag] = []
    changed: dict[str, SnapshotManifest] = {}
    for host, manifest in snapshot(world, t).items():
        before = previous.get(host, {})
        dirty = False
        for path, digest in sorted(manifest.files.items()):
            old = before.get(path)
            if old == digest:
                continue
            dirty = True
            if not wl.anticipated(host, path, digest, t, period):
                flags.append(IntegrityFlag(t, host, path, old, digest, anticipated=False))
        if dirty:
            changed[host] = manifest
    return flags, changed


class IntegrityMonitor:
    """Holds the previous-scan state and plugs into :func:`camosim.sim.run`."""

    def __init__(self, wl: Whitelist, period: int = DEFAULT_SCAN_PERIOD):
        if period <= 0:
            raise ValueError("scan period must be positive")
        self.wl = wl
        self.period = period
        self.previous: dict[str, dict[str, str]] = {h: dict(f) for h, f in wl.snapshots.items()}

    def scan(self, world: WorldState, t: int) -> list[tuple[Record, str]]:
        flags, changed = integrity_scan(world, t, self.wl, self.period, self.previous)
        out: list[tuple[Record, str]] = []
        for flag in flags:
            out.append((flag, world.writers.get((flag.host, flag.path), "system")))
        for host, manifest in changed.items():
            self.previous[host] = dict(manifest.files)
            writers = {world.writers.get((host, p), "system") for p in manifest.files}
            attackers = sorted(w for w in writers if w.startswith("attacker:"))
            out.append((manifest, attackers[0] if attackers else "system"))
        return out


# --------------------------------------------------------------------------
# building


def _initial_manifests(instance: EnvironmentInstance) -> dict[str, dict[str, str]]:
    return {h.hostname: dict(h.critical_files) for h in instance.hosts}


def provisional_whitelist(instance: EnvironmentInstance, ledger: Sequence[AnticipatedChange],
                          period: int = DEFAULT_SCAN_PERIOD, slack: float = DEFAULT_RATE_SLACK) -> Whitelist:
    """A whitelist holding only the ledger and initial state, enough to drive scans."""
    return Whitelist(instance.template_id, instance.id, dict(sorted(instance.addresses.items())), {},
                     frozenset(), tuple(ledger), _initial_manifests(instance), period, slack)


def whitelist_from_stream(stream: Iterable[TelemetryEvent], base: Whitelist) -> Whitelist:
    """Collect every benign flow pattern and log template from ``stream``."""
    per_hour: Counter[tuple[FlowPattern, int]] = Counter()
    logs: set[tuple[str, str, str]] = set()
    for ev in stream:
        if ev.actor.startswith("attacker:"):
            continue
        rec = ev.record
        if isinstance(rec, FlowRecord):
            per_hour[(base.pattern(rec), rec.start // 3600)] += 1
        elif isinstance(rec, LogRecord):
            logs.add((rec.host, rec.source, rec.template))
    flows: dict[FlowPattern, int] = {}
    for (pat, _), n in per_hour.items():
        flows[pat] = max(flows.get(pat, 0), n)
    return Whitelist(base.template_id, base.instance_id, base.addresses, dict(sorted(flows.items())),
                     frozenset(logs), base.ledger, base.snapshots, base.period, base.slack)


def build_baseline(
    instance: EnvironmentInstance,
    days: int,
    seed: int,
    *,
    period: int = DEFAULT_SCAN_PERIOD,
    slack: float = DEFAULT_RATE_SLACK,
) -> tuple[Whitelist, TelemetryStream]:
    if days < 1:
        raise ValueError("days must be at least 1")
    if not instance.personas and not instance.services:
        raise EmptyEnvironment(f"{instance.template_id} has neither personas nor services")
    inputs, ledger = persona_activity(instance, days, seed)
    provisional = provisional_whitelist(instance, ledger, period, slack)
    stream, _ = run(instance, inputs, days * DAY, monitor=IntegrityMonitor(provisional, period))
    return whitelist_from_stream(stream, provisional), stream


# --------------------------------------------------------------------------
# whitelist.wl


def dumps_whitelist(wl: Whitelist) -> str:
    lines = [
        f"{WHITELIST_HEADER}\t{WHITELIST_VERSION}",
        f"template\t{wl.template_id}",
        f"instance\t{wl.instance_id}",
        f"period\t{wl.period}",
        f"slack\t{wl.slack!r}",
    ]
    lines += [f"host\t{name}\t{addr}" for addr, name in sorted(wl.addresses.items())]
    lines += [f"flow\t{s}\t{d}\t{p}\t{proto}\t{n}" for (s, d, p, proto), n in sorted(wl.flows.items())]
    lines += [f"log\t{h}\t{src}\t{tpl}" for h, src, tpl in sorted(wl.logs)]
    lines += [f"change\t{c.host}\t{c.path}\t{c.expected_new_digest}\t{c.earliest_time}\t{c.cause}"
              for c in wl.ledger]
    lines += [f"file\t{host}\t{path}\t{digest}"
              for host, files in sorted(wl.snapshots.items()) for path, digest in sorted(files.items())]
    return "\n".join(lines) + "\n"


_ARITY = {"template": 1, "instance": 1, "period": 1, "slack": 1, "host": 2, "flow": 5,
          "log": 3, "change": 5, "file": 3}


def loads_whitelist(text: str) -> Whitelist:
    lines = text.split("\n")
    if not lines or lines[0] != f"{WHITELIST_HEADER}\t{WHITELIST_VERSION}":
        raise ParseError("missing or unsupported whitelist header", line=1)
    if lines[-1] != "":
        raise ParseError("truncated whitelist (no final newline)", line=len(lines))
    meta: dict[str, str] = {}
    addresses: dict[str, str] = {}
    flows: dict[FlowPattern, int] = {}
    logs: set[tuple[str, str, str]] = set()
    ledger: list[AnticipatedChange] = []
    snaps: dict[str, dict[str, str]] = defaultdict(dict)
    for no, line in enumerate(lines[1:-1], start=2):
        parts = line.split("\t")
        kind, args = parts[0], parts[1:]
        if kind not in _ARITY:
            raise ParseError(f"unknown whitelist entry {kind!r}", line=no)
        if len(args) != _ARITY[kind]:
            raise ParseError(f"{kind} entry expects {_ARITY[kind]} fields, got {len(args)}", line=no)
        try:
            if kind in ("template", "instance", "period", "slack"):
                meta[kind] = args[0]
            elif kind == "host":
                addresses[args[1]] = args[0]
            elif kind == "flow":
                flows[(args[0], args[1], int(args[2]), args[3])] = int(args[4])
            elif kind == "log":
                logs.add((args[0], args[1], args[2]))
            elif kind == "change":
                ledger.append(AnticipatedChange(args[0], args[1], args[2], int(args[3]), args[4]))
            else:
                snaps[args[0]][args[1]] = args[2]
        except ValueError as exc:
            raise ParseError(f"bad {kind} entry: {exc}", line=no) from None
    missing = {"template", "instance", "period", "slack"} - set(meta)
    if missing:
        raise ParseError(f"whitelist lacks {sorted(missing)}", line=len(lines))
    try:
        period, slack = int(meta["period"]), float(meta["slack"])
    except ValueError as exc:
        raise ParseError(f"bad whitelist header value: {exc}", line=1) from None
    return Whitelist(meta["template"], meta["instance"], addresses, flows, frozenset(logs),
                     tuple(ledger), dict(snaps), period, slack)


def save_whitelist(wl: Whitelist, path: str | os.PathLike) -> None:
    try:
        Path(path).write_text(dumps_whitelist(wl), encoding="utf-8", newline="\n")
    except OSError as exc:
        raise TelemetryIOError(str(exc)) from exc


def load_whitelist(path: str | os.PathLike) -> Whitelist:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise TelemetryIOError(str(exc)) from exc
    return loads_whitelist(text)
