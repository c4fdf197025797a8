"""Deterministic emulated-employee activity.

Each persona gets a seeded Poisson arrival process over its working hours.
Realizing a schedule turns the abstract events into simulation inputs and an
anticipated-change ledger so the integrity scanner knows which file edits
are planned.
"""

from __future__ import annotations

import enum
import ipaddress
import random
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

from camosim._docs import derive_seed, sha256_hex
from camosim.errors import UnknownHost, UnknownPath
from camosim.sim import Actor, FileWrite, Flow, LogEmit, SimInput

if TYPE_CHECKING:
    from camosim.envmodel import EnvironmentInstance

DAY = 86400

BROWSERS = frozenset({"chrome", "firefox", "safari", "edge"})
MAIL_CLIENTS = frozenset({"outlook", "thunderbird", "apple-mail"})
OFFICE_APPS = frozenset({"excel", "word", "libreoffice", "numbers", "acrobat"})

# relative weights when every kind is available
_KIND_WEIGHTS = {"app_launch": 3, "web_request": 4, "email_send": 2, "file_edit": 2}
_WORK_SHARE = 0.6


def parse_clock(text) -> int:
    """``"HH:MM"`` -> minutes of day. ``"24:00"`` is allowed as an end bound."""
    if not isinstance(text, str) or len(text.split(":")) != 2:
        raise ValueError(f"expected HH:MM, got {text!r}")
    hh, mm = text.split(":")
    if not (hh.isdigit() and mm.isdigit() and len(mm) == 2):
        raise ValueError(f"expected HH:MM, got {text!r}")
    minutes = int(hh) * 60 + int(mm)
    if int(mm) >= 60 or minutes > 24 * 60:
        raise ValueError(f"time of day out of range: {text!r}")
    return minutes


def format_clock(minutes: int) -> str:
    return f"{minutes // 60:02d}:{minutes % 60:02d}"


class ActivityKind(str, enum.Enum):
    APP_LAUNCH = "app_launch"
    WEB_REQUEST = "web_request"
    EMAIL_SEND = "email_send"
    FILE_EDIT = "file_edit"


@dataclass(frozen=True)
class PersonaProfile:
    name: str
    role_label: str
    host: str
    working_hours: tuple[int, int]  # minutes of day, [start, end)
    app_set: frozenset[str]
    interest_tags: frozenset[str] = frozenset()
    activity_rate: float = 0.0  # expected actions per hour
    documents: tuple[str, ...] = ()  # critical files this persona edits

    def available_kinds(self) -> list[ActivityKind]:
        kinds = [ActivityKind.APP_LAUNCH] if self.app_set else []
        if self.app_set & BROWSERS:
            kinds.append(ActivityKind.WEB_REQUEST)
        if self.app_set & MAIL_CLIENTS:
            kinds.append(ActivityKind.EMAIL_SEND)
        if self.app_set & OFFICE_APPS and self.documents:
            kinds.append(ActivityKind.FILE_EDIT)
        return kinds


@dataclass(frozen=True)
class ActivityEvent:
    time: int
    persona: str
    host: str
    kind: ActivityKind
    app: str
    target: str  # "work", "interest:<tag>", "mail" or a file path


@dataclass(frozen=True)
class AnticipatedChange:
    host: str
    path: str
    expected_new_digest: str
    earliest_time: int
    cause: str


def generate_schedule(profile: PersonaProfile, day_index: int, seed: int) -> list[ActivityEvent]:
    start, end = profile.working_hours
    span = (end - start) * 60
    kinds = profile.available_kinds()
    if profile.activity_rate <= 0 or span <= 0 or not kinds:
        return []
    rng = random.Random(derive_seed("schedule", seed, day_index, profile.name))
    rate = profile.activity_rate / 3600.0
    weights = [_KIND_WEIGHTS[k.value] for k in kinds]
    base = day_index * DAY + start * 60

    browsers = sorted(profile.app_set & BROWSERS)
    mail = sorted(profile.app_set & MAIL_CLIENTS)
    office = sorted(profile.app_set & OFFICE_APPS)
    apps = sorted(profile.app_set)
    interests = sorted(profile.interest_tags)

    events: list[ActivityEvent] = []
    t = 0.0
    prev = -1
    while True:
        t += rng.expovariate(rate)
        sec = max(int(t), prev + 1)
        if sec >= span:
            break
        prev = sec
        kind = rng.choices(kinds, weights)[0]
        if kind is ActivityKind.APP_LAUNCH:
            app, target = rng.choice(apps), ""
        elif kind is ActivityKind.WEB_REQUEST:
            app = rng.choice(browsers)
            if interests and rng.random() >= _WORK_SHARE:
                target = f"interest:{rng.choice(interests)}"
            else:
                target = "work"
        elif kind is ActivityKind.EMAIL_SEND:
            app, target = rng.choice(mail), "mail"
        else:
            app, target = rng.choice(office), rng.choice(profile.documents)
        events.append(ActivityEvent(base + sec, profile.name, profile.host, kind, app, target))
    return events


def merge_schedules(schedules: Iterable[Sequence[ActivityEvent]]) -> list[ActivityEvent]:
    merged = [e for s in schedules for e in s]
    merged.sort(key=lambda e: (e.time, e.persona))
    return merged


def external_address(label: str) -> str:
    """Stable public-looking address standing in for an internet destination."""
    n = 0
    while True:
        value = derive_seed("external", label, n) & 0xFFFFFFFF
        ip = ipaddress.IPv4Address(value)
        # 198.51.100.0/24 is reserved for scripted attacker origins
        if ip.is_global and not ip.is_multicast and ip not in ipaddress.ip_network("198.51.100.0/24"):
            return str(ip)
        n += 1


MAIL_RELAY = "mail-relay"


def storefront(instance: "EnvironmentInstance"):
    """The first https service on a server; the destination of ``work`` requests."""
    for s in sorted(instance.services, key=lambda s: (s.host, s.port)):
        if s.protocol_label == "https":
            return s
    return None


def realize(events: Sequence[ActivityEvent], instance: "EnvironmentInstance") -> tuple[list[SimInput], list[AnticipatedChange]]:
    hosts = {h.hostname: h for h in instance.hosts}
    digests = {(h.hostname, p): d for h in instance.hosts for p, d in h.critical_files}
    shop = storefront(instance)
    inputs: list[SimInput] = []
    ledger: list[AnticipatedChange] = []
    for ev in sorted(events, key=lambda e: (e.time, e.persona)):
        host = hosts.get(ev.host)
        if host is None:
            raise UnknownHost(f"event at t={ev.time} names unknown host {ev.host!r}")
        actor = Actor.persona(ev.persona)
        h = derive_seed("volume", instance.seed, ev.time, ev.persona)
        if ev.kind is ActivityKind.APP_LAUNCH:
            inputs.append(SimInput(ev.time, actor, LogEmit(host.hostname, "application", "app.launch", {"app": ev.app})))
        elif ev.kind is ActivityKind.WEB_REQUEST:
            if ev.target == "work":
                if shop is None:
                    raise UnknownHost("no storefront service in instance")
                dst = instance.host(shop.host).address
                inputs.append(SimInput(ev.time, actor, Flow(host.address, dst, shop.port, 2_000 + h % 180_000,
                                                            1 + h % 20, shop.protocol_label)))
                inputs.append(SimInput(ev.time, actor, LogEmit(shop.host, "service", "http.access",
                                                               {"port": shop.port, "src": host.address})))
            else:
                dst = external_address(ev.target)
                inputs.append(SimInput(ev.time, actor, Flow(host.address, dst, 443, 5_000 + h % 900_000,
                                                            1 + h % 60, "https")))
        elif ev.kind is ActivityKind.EMAIL_SEND:
            inputs.append(SimInput(ev.time, actor, Flow(host.address, external_address(MAIL_RELAY), 587,
                                                        1_500 + h % 40_000, 1 + h % 5, "smtp-submission")))
            inputs.append(SimInput(ev.time, actor, LogEmit(host.hostname, "application", "mail.send", {"app": ev.app})))
        else:
            key = (host.hostname, ev.target)
            if key not in digests:
                raise UnknownPath(f"{ev.target!r} is not a tracked file on {host.hostname}")
            new = sha256_hex(digests[key], ev.time, ev.persona)
            digests[key] = new
            inputs.append(SimInput(ev.time, actor, FileWrite(host.hostname, ev.target, new)))
            ledger.append(AnticipatedChange(host.hostname, ev.target, new, ev.time, ev.persona))
    return inputs, ledger


def persona_activity(instance: "EnvironmentInstance", days: int, seed: int) -> tuple[list[SimInput], list[AnticipatedChange]]:
    """Schedules for every persona over ``days`` days, realized against ``instance``."""
    schedules = [generate_schedule(p, d, seed) for d in range(days) for p in instance.personas]
    return realize(merge_schedules(schedules), instance)
