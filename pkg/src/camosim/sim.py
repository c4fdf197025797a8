"""Deterministic discrete-event engine.

Inputs are processed in a fixed total order ``(time, actor ordinal,
sequence)`` with system < persona < attacker, so two runs over the same
inputs are byte-identical. There is no wall clock anywhere in the loop.
"""

from __future__ import annotations

import ipaddress
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Protocol, Sequence, Union

from camosim.errors import MalformedInput
from camosim.telemetry import (
    PERIMETER_HOST,
    FlowRecord,
    LogRecord,
    Record,
    SnapshotManifest,
    TelemetryStream,
    template_registered,
)

if TYPE_CHECKING:
    from camosim.envmodel import EnvironmentInstance

log = logging.getLogger(__name__)

HEARTBEAT_INTERVAL = 900
_ORDINAL = {"system": 0, "persona": 1, "attacker": 2}


@dataclass(frozen=True, order=True)
class Actor:
    kind: str
    name: str = ""

    @classmethod
    def persona(cls, name: str) -> "Actor":
        return cls("persona", name)

    @classmethod
    def attacker(cls, scenario_id: str) -> "Actor":
        return cls("attacker", scenario_id)

    @property
    def ordinal(self) -> int:
        return _ORDINAL[self.kind]

    def __str__(self) -> str:
        return self.kind if self.kind == "system" else f"{self.kind}:{self.name}"


SYSTEM = Actor("system")


@dataclass(frozen=True)
class Flow:
    src: str
    dst: str
    port: int
    bytes: int
    duration: int
    protocol: str


@dataclass(frozen=True)
class FileWrite:
    host: str
    path: str
    digest: str


@dataclass(frozen=True)
class LogEmit:
    host: str
    source: str
    template: str
    args: dict[str, Any] = field(default_factory=dict)
    severity: str = "info"


@dataclass(frozen=True)
class ServiceTransition:
    host: str
    port: int
    state: str


Effect = Union[Flow, FileWrite, LogEmit, ServiceTransition]


@dataclass(frozen=True)
class SimInput:
    time: int
    actor: Actor
    effect: Effect


@dataclass
class WorldState:
    files: dict[str, dict[str, str]]
    services: dict[tuple[str, int], str]
    connections: list[FlowRecord] = field(default_factory=list)
    clock: int = 0
    # ground truth: last writer of each file; never consulted by detection
    writers: dict[tuple[str, str], str] = field(default_factory=dict)
    history: list[tuple[int, str, str, str | None, str]] = field(default_factory=list)

    @classmethod
    def initial(cls, instance: "EnvironmentInstance") -> "WorldState":
        return cls(
            files={h.hostname: dict(h.critical_files) for h in instance.hosts},
            services={(s.host, s.port): "up" for s in instance.services},
        )


class Monitor(Protocol):
    period: int

    def scan(self, world: WorldState, t: int) -> list[tuple[Record, str]]: ...


def snapshot(world: WorldState, t: int) -> dict[str, SnapshotManifest]:
    """File-digest manifest of every host at ``t``."""
    if t > world.clock:
        raise ValueError(f"cannot snapshot at t={t}, world clock is {world.clock}")
    return {host: SnapshotManifest(t, host, dict(files)) for host, files in sorted(world.files.items())}


def _check_address(value: Any) -> bool:
    try:
        ipaddress.ip_address(value)
    except (ValueError, TypeError):
        return False
    return True


def _validate(index: int, item: Any, instance: "EnvironmentInstance", roles: dict[str, str]) -> None:
    if not isinstance(item, SimInput):
        raise MalformedInput(index, "not a SimInput")
    if not isinstance(item.time, int) or isinstance(item.time, bool) or item.time < 0:
        raise MalformedInput(index, f"bad time {item.time!r}")
    if not isinstance(item.actor, Actor) or item.actor.kind not in _ORDINAL:
        raise MalformedInput(index, f"bad actor {item.actor!r}")
    eff = item.effect
    if isinstance(eff, Flow):
        if not (_check_address(eff.src) and _check_address(eff.dst)):
            raise MalformedInput(index, "flow endpoints must be addresses")
        if not (instance.topology.is_internal(eff.src) or instance.topology.is_internal(eff.dst)):
            raise MalformedInput(index, "flow has no endpoint inside the environment")
        if not (1 <= eff.port <= 65535) or eff.bytes < 0 or eff.duration < 0:
            raise MalformedInput(index, "flow port, bytes or duration out of range")
    elif isinstance(eff, FileWrite):
        if eff.host not in roles:
            raise MalformedInput(index, f"unknown host {eff.host!r}")
    elif isinstance(eff, LogEmit):
        role = roles.get(eff.host)
        if role is None:
            raise MalformedInput(index, f"unknown host {eff.host!r}")
        if not template_registered(role, eff.source, eff.template):
            raise MalformedInput(index, f"template {eff.template!r} not registered for ({role}, {eff.source})")
    elif isinstance(eff, ServiceTransition):
        if instance.service(eff.host, eff.port) is None:
            raise MalformedInput(index, f"no service at {eff.host}:{eff.port}")
    else:
        raise MalformedInput(index, f"unknown effect {eff!r}")


def run(
    instance: "EnvironmentInstance",
    inputs: Sequence[SimInput],
    horizon: int,
    *,
    monitor: Monitor | None = None,
    heartbeat_interval: int = HEARTBEAT_INTERVAL,
) -> tuple[TelemetryStream, WorldState]:
    """Advance the world over ``[0, horizon)`` and return the telemetry it produced."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    roles = {h.hostname: h.role.value for h in instance.hosts}
    roles[PERIMETER_HOST] = "perimeter"
    for i, item in enumerate(inputs):
        _validate(i, item, instance, roles)

    # (time, actor ordinal, kind, sequence, payload)
    queue: list[tuple[int, int, int, int, Any]] = []
    skipped = 0
    for i, item in enumerate(inputs):
        if item.time >= horizon:
            skipped += 1
            continue
        queue.append((item.time, item.actor.ordinal, 2, i, item))
    if skipped:
        log.warning("ignored %d input(s) at or beyond horizon %d", skipped, horizon)
    if heartbeat_interval > 0:
        hosts = [h.hostname for h in instance.hosts]
        for t in range(0, horizon, heartbeat_interval):
            for hi, host in enumerate(hosts):
                queue.append((t, 0, 0, hi, ("heartbeat", host)))
    if monitor is not None and horizon > 0:
        scan_times = list(range(monitor.period, horizon, monitor.period))
        scan_times.append(horizon)
        for t in scan_times:
            queue.append((t, 0, 1, 0, ("scan", None)))
    queue.sort(key=lambda q: q[:4])

    world = WorldState.initial(instance)
    stream = TelemetryStream()
    topo = instance.topology
    for t, _, _, _, payload in queue:
        world.clock = max(world.clock, t)
        if world.connections:
            world.connections = [c for c in world.connections if c.end > t]
        if isinstance(payload, tuple):
            what, host = payload
            if what == "heartbeat":
                stream.emit(LogRecord(t, host, "system", "sys.heartbeat", {"uptime": t}), str(SYSTEM))
            else:
                for record, actor in monitor.scan(world, t):
                    stream.emit(record, actor)
            continue
        actor = str(payload.actor)
        eff = payload.effect
        if isinstance(eff, Flow):
            action, rule = topo.evaluate(eff.src, eff.dst, eff.port)
            if action.value == "deny":
                args = {"direction": topo.direction(eff.src, eff.dst).value, "src": eff.src,
                        "dst": eff.dst, "port": eff.port, "protocol": eff.protocol,
                        "rule": rule.label if rule else ""}
                stream.emit(LogRecord(t, PERIMETER_HOST, "perimeter", "fw.deny", args, "warning"), actor)
            else:
                rec = FlowRecord(t, t + eff.duration, eff.src, eff.dst, eff.port, eff.protocol, eff.bytes, actor)
                world.connections.append(rec)
                stream.emit(rec, actor)
        elif isinstance(eff, FileWrite):
            table = world.files.setdefault(eff.host, {})
            old = table.get(eff.path)
            table[eff.path] = eff.digest
            world.writers[(eff.host, eff.path)] = actor
            world.history.append((t, eff.host, eff.path, old, eff.digest))
            stream.emit(LogRecord(t, eff.host, "system", "fs.modify", {"path": eff.path}), actor)
        elif isinstance(eff, LogEmit):
            stream.emit(LogRecord(t, eff.host, eff.source, eff.template, dict(eff.args), eff.severity), actor)
        else:
            world.services[(eff.host, eff.port)] = eff.state
            stream.emit(LogRecord(t, eff.host, "service", "svc.state",
                                  {"port": eff.port, "state": eff.state},
                                  "error" if eff.state == "compromised" else "info"), actor)
    world.clock = max(world.clock, horizon)
    stream.close()
    return stream, world
