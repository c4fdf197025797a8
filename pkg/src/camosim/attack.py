"""Scripted attacker scenarios, vulnerability lifecycle, and signature scanning.

Payloads are inert byte strings. A payload stage never runs code: it
schedules file writes and flows whose digests derive from the payload body,
which is all the detection side can observe anyway.
"""

from __future__ import annotations

import enum
import ipaddress
import os
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from camosim._docs import Checker, derive_seed, read_toml, sha256_hex
from camosim.envmodel import Action, EnvironmentInstance
from camosim.errors import NegativeTime, NotFound, ParseError, TemplateMismatch, UnknownHost, ValidationError
from camosim.sim import Actor, FileWrite, Flow, LogEmit, ServiceTransition, SimInput

SCENARIO_FORMAT = "camosim-scenario/1"
PROBE_PROTOCOL = "tcp-syn"


class StageKind(str, enum.Enum):
    RECON_SCAN = "recon_scan"
    EXPLOIT_ATTEMPT = "exploit_attempt"
    FILE_PAYLOAD = "file_payload"
    EXFIL_FLOW = "exfil_flow"
    LATERAL_MOVE = "lateral_move"


_RANK = {StageKind.RECON_SCAN: 0, StageKind.EXPLOIT_ATTEMPT: 1}

_STAGE_PARAMS: dict[StageKind, tuple[set[str], set[str]]] = {
    # kind: (required, optional)
    StageKind.RECON_SCAN: ({"ports"}, set()),
    StageKind.EXPLOIT_ATTEMPT: ({"host", "port"}, {"bytes"}),
    StageKind.FILE_PAYLOAD: ({"host", "paths"}, {"drop"}),
    StageKind.EXFIL_FLOW: ({"host", "port", "bytes"}, {"dst"}),
    StageKind.LATERAL_MOVE: ({"host", "to_host", "port"}, set()),
}


class Phase(str, enum.Enum):
    INNOVATION = "Innovation"
    COMMERCIALIZATION = "Commercialization"
    SOCIAL_GAIN = "SocialGain"


class LifecycleEvent(str, enum.Enum):
    FIRST_USE = "first_use"
    PATCH_PUBLISHED = "patch_published"


_PHASE_ORDER = [Phase.INNOVATION, Phase.COMMERCIALIZATION, Phase.SOCIAL_GAIN]


@dataclass(frozen=True)
class VulnerabilityRecord:
    id: str
    affected_version: str
    patched_version: str
    phase: Phase = Phase.INNOVATION


def advance_lifecycle(vuln: VulnerabilityRecord, event: LifecycleEvent | str) -> VulnerabilityRecord:
    event = LifecycleEvent(event)
    if event is LifecycleEvent.FIRST_USE:
        target = Phase.COMMERCIALIZATION
    else:
        target = Phase.SOCIAL_GAIN
    # phases only move forward
    if _PHASE_ORDER.index(target) <= _PHASE_ORDER.index(vuln.phase):
        return vuln
    return replace(vuln, phase=target)


@dataclass(frozen=True)
class PayloadSpec:
    id: str
    body: bytes
    behavior_tag: str
    mutable_region: tuple[int, int]  # offset, length

    def __post_init__(self):
        off, length = self.mutable_region
        if not self.body:
            raise ValueError(f"payload {self.id!r} has an empty body")
        if off < 0 or length <= 0 or off + length > len(self.body):
            raise ValueError(f"payload {self.id!r} mutable region out of bounds")

    @property
    def signature(self) -> bytes:
        off, length = self.mutable_region
        return self.body[off:off + length]

    @property
    def fingerprint(self) -> str:
        """Digest of the payload as dropped on disk."""
        return sha256_hex(b"payload", self.body)


def mutate_payload(payload: PayloadSpec, seed: int) -> PayloadSpec:
    """Seeded byte substitution inside the mutable region; every byte there changes."""
    rng = random.Random(derive_seed("mutate", payload.id, seed, payload.body))
    off, length = payload.mutable_region
    body = bytearray(payload.body)
    for i in range(off, off + length):
        body[i] = (body[i] + rng.randrange(1, 256)) % 256
    return PayloadSpec(f"{payload.id}~{seed}", bytes(body), payload.behavior_tag, payload.mutable_region)


@dataclass(frozen=True)
class SignatureDB:
    entries: Mapping[str, bytes] = field(default_factory=dict)

    def __post_init__(self):
        for sid, pattern in self.entries.items():
            if not pattern:
                raise ValueError(f"signature {sid!r} has an empty pattern")

    def with_signature(self, sid: str, pattern: bytes) -> "SignatureDB":
        if sid in self.entries:
            raise ValueError(f"duplicate signature id {sid!r}")
        return SignatureDB({**self.entries, sid: pattern})

    def with_payload(self, payload: PayloadSpec) -> "SignatureDB":
        return self.with_signature(payload.id, payload.signature)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class Match:
    signature_id: str


class _NoMatch:
    def __repr__(self) -> str:
        return "NoMatch"

    def __bool__(self) -> bool:
        return False


NO_MATCH = _NoMatch()


def scan_signature(payload: PayloadSpec, db: SignatureDB):
    for sid in sorted(db.entries):
        if db.entries[sid] in payload.body:
            return Match(sid)
    return NO_MATCH


def load_signatures(path: str | os.PathLike) -> SignatureDB:
    """Text file, one ``<id> <hex pattern>`` per line; ``#`` starts a comment."""
    p = Path(path)
    if not p.is_file():
        raise NotFound(p)
    entries: dict[str, bytes] = {}
    for no, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError("expected '<id> <hex pattern>'", line=no)
        sid, hexpat = parts
        try:
            pattern = bytes.fromhex(hexpat)
        except ValueError:
            raise ParseError(f"invalid hex pattern for {sid!r}", line=no) from None
        if not pattern:
            raise ParseError(f"empty pattern for {sid!r}", line=no)
        if sid in entries:
            raise ParseError(f"duplicate signature id {sid!r}", line=no)
        entries[sid] = pattern
    return SignatureDB(entries)


def dumps_signatures(db: SignatureDB) -> str:
    return "".join(f"{sid} {db.entries[sid].hex()}\n" for sid in sorted(db.entries))


@dataclass(frozen=True)
class Stage:
    kind: StageKind
    offset: int
    params: Mapping[str, Any]


@dataclass(frozen=True)
class AttackScenario:
    id: str
    target_template: str
    origin: str  # external address the attacker operates from
    vulnerability: VulnerabilityRecord
    payload: PayloadSpec
    stages: tuple[Stage, ...]
    description: str = ""
    interpretive: bool = False

    @property
    def exploit(self) -> Stage:
        return next(s for s in self.stages if s.kind is StageKind.EXPLOIT_ATTEMPT)

    @property
    def required_vulnerability(self) -> str:
        return self.vulnerability.id


def load_scenario(path: str | os.PathLike) -> AttackScenario:
    doc = read_toml(path, SCENARIO_FORMAT)
    return scenario_from_dict(doc)


def _check_stage_params(ck: Checker, where: str, kind: StageKind, params: dict) -> None:
    for key in ("host", "to_host", "drop"):
        if key in params:
            ck.typed(f"{where}.{key}", params[key], str, "a string")
    for key in ("port", "bytes"):
        if key in params and ck.typed(f"{where}.{key}", params[key], int, "an integer"):
            if key == "port" and not 1 <= params[key] <= 65535:
                ck.add(f"{where}: port out of range")
            if key == "bytes" and params[key] < 0:
                ck.add(f"{where}: bytes must be non-negative")
    if "ports" in params:
        ports = params["ports"]
        if not (isinstance(ports, list) and ports and all(
                isinstance(p, int) and not isinstance(p, bool) and 1 <= p <= 65535 for p in ports)):
            ck.add(f"{where}.ports: expected a nonempty list of ports")
    if "paths" in params:
        if ck.str_list(f"{where}.paths", params["paths"]) and len(set(params["paths"])) != len(params["paths"]):
            ck.add(f"{where}.paths: repeated path")
    if "dst" in params:
        try:
            ipaddress.ip_address(params["dst"])
        except (ValueError, TypeError):
            ck.add(f"{where}.dst: not an address")


def scenario_from_dict(doc: Mapping[str, Any]) -> AttackScenario:
    ck = Checker()
    top = {"format", "id", "target_template", "origin", "description", "interpretive",
           "vulnerability", "payload", "stages"}
    if not ck.keys("scenario", doc, top, {"id", "target_template", "origin", "vulnerability", "payload", "stages"}):
        raise ValidationError(ck.violations)
    for key in ("id", "target_template", "origin"):
        ck.typed(key, doc[key], str, "a string")
    try:
        ipaddress.ip_address(doc["origin"])
    except (ValueError, TypeError):
        ck.add(f"origin: not an address: {doc['origin']!r}")

    vuln = None
    v = doc["vulnerability"]
    if ck.keys("vulnerability", v, {"id", "affected_version", "patched_version", "phase"},
               {"id", "affected_version", "patched_version"}):
        try:
            vuln = VulnerabilityRecord(str(v["id"]), str(v["affected_version"]), str(v["patched_version"]),
                                       Phase(v.get("phase", "Innovation")))
        except ValueError:
            ck.add(f"vulnerability.phase: unknown phase {v.get('phase')!r}")

    payload = None
    pl = doc["payload"]
    if ck.keys("payload", pl, {"id", "body", "body_hex", "behavior_tag", "mutable_region"},
               {"id", "behavior_tag", "mutable_region"}):
        body = None
        if ("body" in pl) == ("body_hex" in pl):
            ck.add("payload: give exactly one of body or body_hex")
        elif "body" in pl and ck.typed("payload.body", pl["body"], str, "a string"):
            body = pl["body"].encode("utf-8")
        elif "body_hex" in pl:
            try:
                body = bytes.fromhex(pl["body_hex"])
            except (ValueError, TypeError):
                ck.add("payload.body_hex: invalid hex")
        region = pl["mutable_region"]
        if not (isinstance(region, list) and len(region) == 2 and all(isinstance(x, int) for x in region)):
            ck.add("payload.mutable_region: expected [offset, length]")
        elif body is not None:
            try:
                payload = PayloadSpec(str(pl["id"]), body, str(pl["behavior_tag"]), (region[0], region[1]))
            except ValueError as exc:
                ck.add(f"payload: {exc}")

    stages: list[Stage] = []
    raw_stages = doc["stages"]
    if not isinstance(raw_stages, list) or not raw_stages:
        ck.add("stages: expected a nonempty array of tables")
        raw_stages = []
    for i, raw in enumerate(raw_stages):
        where = f"stages[{i}]"
        if not isinstance(raw, dict) or "kind" not in raw:
            ck.add(f"{where}: expected a table with a kind")
            continue
        try:
            kind = StageKind(raw["kind"])
        except ValueError:
            ck.add(f"{where}: unknown stage kind {raw['kind']!r}")
            continue
        required, optional = _STAGE_PARAMS[kind]
        if not ck.keys(where, raw, {"kind", "offset"} | required | optional, {"kind", "offset"} | required):
            continue
        if not ck.typed(f"{where}.offset", raw["offset"], int, "an integer"):
            continue
        params = {k: raw[k] for k in sorted(required | optional) if k in raw}
        _check_stage_params(ck, where, kind, params)
        stages.append(Stage(kind, raw["offset"], params))

    for a, b in zip(stages, stages[1:]):
        if b.offset <= a.offset:
            ck.add(f"stage offsets must increase ({a.kind.value}@{a.offset} then {b.kind.value}@{b.offset})")
    if any(s.offset < 0 for s in stages):
        ck.add("stage offsets must be non-negative")
    ranks = [_RANK.get(s.kind, 2) for s in stages]
    if ranks != sorted(ranks):
        ck.add("stage order must be recon, then exploit, then payload actions")
    if ranks.count(1) != 1:
        ck.add("scenario needs exactly one exploit_attempt stage")
    written = [(s.params.get("host"), p) for s in stages if s.kind is StageKind.FILE_PAYLOAD
               for p in list(s.params.get("paths", [])) + ([s.params["drop"]] if "drop" in s.params else [])]
    if len(set(written)) != len(written):
        ck.add("payload stages write the same file more than once")

    if ck.violations:
        raise ValidationError(ck.violations)
    return AttackScenario(doc["id"], doc["target_template"], doc["origin"], vuln, payload, tuple(stages),
                          str(doc.get("description", "")), bool(doc.get("interpretive", False)))


# --------------------------------------------------------------------------
# exploitation and injection


class BlockReason(str, enum.Enum):
    PERIMETER = "Perimeter"
    PATCHED = "Patched"
    SERVICE_ABSENT = "ServiceAbsent"


class _Success:
    ok = True

    def __repr__(self) -> str:
        return "Success"


SUCCESS = _Success()


@dataclass(frozen=True)
class Blocked:
    reason: BlockReason
    ok = False


def exploit_check(scenario: AttackScenario, instance: EnvironmentInstance):
    """Success iff the target runs the affected version and the perimeter admits the exploit flow."""
    stage = scenario.exploit
    host, port = stage.params["host"], stage.params["port"]
    service = instance.service(host, port)
    if service is None:
        return Blocked(BlockReason.SERVICE_ABSENT)
    target = instance.host(host).address
    action, _ = instance.topology.evaluate(scenario.origin, target, port)
    if action is Action.DENY:
        return Blocked(BlockReason.PERIMETER)
    if service.version_label != scenario.vulnerability.affected_version:
        return Blocked(BlockReason.PATCHED)
    return SUCCESS


def _address(instance: EnvironmentInstance, host: str) -> str:
    if not instance.has_host(host):
        raise UnknownHost(f"scenario references unknown host {host!r}")
    return instance.host(host).address


def derived_digest(payload: PayloadSpec, path: str) -> str:
    """Digest of a file the payload rewrote (encrypted, dumped, ...)."""
    return sha256_hex(b"payload-output", payload.body, path)


def inject(scenario: AttackScenario, instance: EnvironmentInstance, t0: int) -> list[SimInput]:
    if scenario.target_template != instance.template_id:
        raise TemplateMismatch(f"scenario targets {scenario.target_template!r}, instance is {instance.template_id!r}")
    if t0 < 0:
        raise NegativeTime(f"attack start {t0} is negative")
    for s in scenario.stages:
        for key in ("host", "to_host"):
            if key in s.params:
                _address(instance, s.params[key])
    actor = Actor.attacker(scenario.id)
    out: list[SimInput] = []

    def emit(t, effect):
        out.append(SimInput(t, actor, effect))

    for stage in scenario.stages:
        t = t0 + stage.offset
        p = stage.params
        if stage.kind is StageKind.RECON_SCAN:
            targets = sorted(instance.addresses, key=ipaddress.ip_address)
            probes = [(a, port) for a in targets for port in p["ports"]]
            for i, (addr, port) in enumerate(probes):
                emit(t + i, Flow(scenario.origin, addr, port, 60, 0, PROBE_PROTOCOL))
        elif stage.kind is StageKind.EXPLOIT_ATTEMPT:
            host, port = p["host"], p["port"]
            svc = instance.service(host, port)
            proto = svc.protocol_label if svc else "tcp"
            emit(t, Flow(scenario.origin, _address(instance, host), port, p.get("bytes", 2048), 2, proto))
            outcome = exploit_check(scenario, instance)
            if outcome is SUCCESS:
                emit(t + 1, LogEmit(host, "service", "svc.fault", {"port": port, "event": "worker exited on signal 11"},
                                    "error"))
                emit(t + 2, ServiceTransition(host, port, "compromised"))
            else:
                if outcome.reason is BlockReason.PATCHED:
                    emit(t + 1, LogEmit(host, "service", "svc.exploit_failed",
                                        {"port": port, "vulnerability": scenario.vulnerability.id}, "warning"))
                break
        elif stage.kind is StageKind.FILE_PAYLOAD:
            host = p["host"]
            i = 0
            if "drop" in p:
                emit(t, FileWrite(host, p["drop"], scenario.payload.fingerprint))
                i = 1
            for path in p["paths"]:
                emit(t + i, FileWrite(host, path, derived_digest(scenario.payload, path)))
                i += 1
        elif stage.kind is StageKind.EXFIL_FLOW:
            src = _address(instance, p["host"])
            dst = p.get("dst", scenario.origin)
            emit(t, Flow(src, dst, p["port"], p["bytes"], 1 + p["bytes"] // 1_000_000, "https"))
        else:
            src, dst = _address(instance, p["host"]), _address(instance, p["to_host"])
            port = p["port"]
            svc = instance.service(p["to_host"], port)
            emit(t, Flow(src, dst, port, 4096, 3, svc.protocol_label if svc else "tcp"))
            if svc is not None:
                emit(t + 1, LogEmit(p["to_host"], "service", "svc.admin_session", {"port": port, "src": src},
                                    "warning"))
                emit(t + 2, ServiceTransition(p["to_host"], port, "compromised"))
    out.sort(key=lambda x: x.time)
    return out
