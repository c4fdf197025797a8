"""Environment templates, parameter slots, and concrete experiment instances.

A template is the generic description of a small business network. Its
parameter slots are the knobs an experiment may turn (perimeter policy,
service versions, ...). Instantiating a template with an assignment and a
seed yields a fully resolved :class:`EnvironmentInstance`.
"""

from __future__ import annotations

import enum
import ipaddress
import os
import re
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping

from camosim._docs import Checker, read_toml, sha256_hex
from camosim.errors import (
    DomainViolation,
    TemplateMismatch,
    UnboundSlot,
    ValidationError,
)
from camosim.persona import PersonaProfile, parse_clock

TEMPLATE_FORMAT = "camosim-env/1"
EXTERNAL = "external"

_PLACEHOLDER = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")
_DIGEST = re.compile(r"^[0-9a-f]{64}$")


class HostRole(str, enum.Enum):
    WORKSTATION = "workstation"
    SERVER = "server"


class Action(str, enum.Enum):
    ALLOW = "allow"
    DENY = "deny"


class Direction(str, enum.Enum):
    INBOUND = "inbound"
    OUTBOUND = "outbound"
    ANY = "any"


@dataclass(frozen=True)
class FirewallRule:
    action: Action
    direction: Direction = Direction.ANY
    src: str | None = None
    dst: str | None = None
    port: int | None = None
    default: bool = False
    label: str = ""

    def matches(self, direction: Direction, src: str, dst: str, port: int) -> bool:
        if self.default:
            return True
        if self.direction is not Direction.ANY and self.direction is not direction:
            return False
        if self.port is not None and self.port != port:
            return False
        if self.src is not None and ipaddress.ip_address(src) not in ipaddress.ip_network(self.src):
            return False
        if self.dst is not None and ipaddress.ip_address(dst) not in ipaddress.ip_network(self.dst):
            return False
        return True


@dataclass(frozen=True)
class NetworkTopology:
    """Resolved topology: subnets plus the perimeter policy in force."""

    subnets: tuple[str, ...]
    policy_name: str
    perimeter_policy: tuple[FirewallRule, ...]

    def is_internal(self, address: str) -> bool:
        ip = ipaddress.ip_address(address)
        return any(ip in ipaddress.ip_network(s) for s in self.subnets)

    def direction(self, src: str, dst: str) -> Direction | None:
        """Return the perimeter direction of a flow, or None if it stays inside."""
        src_in, dst_in = self.is_internal(src), self.is_internal(dst)
        if src_in and dst_in:
            return None
        if dst_in:
            return Direction.INBOUND
        if src_in:
            return Direction.OUTBOUND
        raise ValueError(f"flow {src} -> {dst} has no internal endpoint")

    def evaluate(self, src: str, dst: str, port: int) -> tuple[Action, FirewallRule | None]:
        direction = self.direction(src, dst)
        if direction is None:
            return Action.ALLOW, None
        for rule in self.perimeter_policy:
            if rule.matches(direction, src, dst, port):
                return rule.action, rule
        raise AssertionError("policy without a default rule")


@dataclass(frozen=True)
class TopologyTemplate:
    subnets: tuple[str, ...]
    perimeter: str
    policies: Mapping[str, tuple[FirewallRule, ...]]


@dataclass(frozen=True)
class HostSpec:
    hostname: str
    address: str
    os_label: str
    role: HostRole
    installed_apps: frozenset[str]
    critical_files: tuple[tuple[str, str], ...]

    def file_digests(self) -> dict[str, str]:
        return dict(self.critical_files)


@dataclass(frozen=True)
class ServiceSpec:
    host: str
    port: int
    protocol_label: str
    banner: str
    version_label: str
    vulnerability_tags: frozenset[str] = frozenset()


@dataclass(frozen=True)
class ParameterSlot:
    name: str
    domain: tuple[str, ...]
    default: str | None = None
    description: str = ""


@dataclass(frozen=True)
class BusinessFront:
    """Inert descriptive metadata; used only by the camouflage audit."""

    business_name: str
    sector: str
    contacts: tuple[str, ...] = ()
    website: str = ""
    street_address: str = ""

    def strings(self) -> list[str]:
        return [self.business_name, self.sector, *self.contacts, self.website, self.street_address]


@dataclass(frozen=True)
class EnvironmentTemplate:
    id: str
    hosts: tuple[HostSpec, ...]
    services: tuple[ServiceSpec, ...]
    topology: TopologyTemplate
    personas: tuple[PersonaProfile, ...]
    parameter_slots: tuple[ParameterSlot, ...]
    metadata: BusinessFront

    def slot(self, name: str) -> ParameterSlot:
        for s in self.parameter_slots:
            if s.name == name:
                return s
        raise KeyError(name)


ParameterAssignment = Mapping[str, str]
ParameterDelta = dict[str, tuple[str, str]]


@dataclass(frozen=True)
class EnvironmentInstance:
    template_id: str
    assignment: Mapping[str, str]
    hosts: tuple[HostSpec, ...]
    services: tuple[ServiceSpec, ...]
    topology: NetworkTopology
    personas: tuple[PersonaProfile, ...]
    metadata: BusinessFront
    seed: int
    template: EnvironmentTemplate = field(compare=False, repr=False)

    @property
    def id(self) -> str:
        key = ",".join(f"{k}={v}" for k, v in sorted(self.assignment.items()))
        return f"{self.template_id}-{sha256_hex(key, self.seed)[:12]}"

    def host(self, name: str) -> HostSpec:
        for h in self.hosts:
            if h.hostname == name:
                return h
        raise KeyError(name)

    def has_host(self, name: str) -> bool:
        return any(h.hostname == name for h in self.hosts)

    def service(self, host: str, port: int) -> ServiceSpec | None:
        for s in self.services:
            if s.host == host and s.port == port:
                return s
        return None

    @property
    def addresses(self) -> dict[str, str]:
        """Address -> hostname."""
        return {h.address: h.hostname for h in self.hosts}


# --------------------------------------------------------------------------
# loading


def load_template(path: str | os.PathLike) -> EnvironmentTemplate:
    doc = read_toml(path, TEMPLATE_FORMAT)
    return template_from_dict(doc)


def _placeholders(text: str) -> list[str]:
    return _PLACEHOLDER.findall(text)


def substitute(text: str, values: Mapping[str, str]) -> str:
    def repl(m):
        try:
            return values[m.group(1)]
        except KeyError:
            raise UnboundSlot(m.group(1)) from None

    return _PLACEHOLDER.sub(repl, text)


def _parse_rule(ck: Checker, where: str, raw: Any) -> FirewallRule | None:
    allowed = {"action", "direction", "src", "dst", "port", "default", "label"}
    if not ck.keys(where, raw, allowed, {"action"}):
        return None
    ok = True
    try:
        action = Action(raw["action"])
    except (ValueError, TypeError):
        ck.add(f"{where}: action must be allow or deny")
        ok = False
    try:
        direction = Direction(raw.get("direction", "any"))
    except (ValueError, TypeError):
        ck.add(f"{where}: direction must be inbound, outbound or any")
        ok = False
    for key in ("src", "dst"):
        if key in raw:
            try:
                if not isinstance(raw[key], str):
                    raise TypeError
                ipaddress.ip_network(raw[key])
            except (ValueError, TypeError):
                ck.add(f"{where}: {key} is not a network: {raw[key]!r}")
                ok = False
    port = raw.get("port")
    if port is not None and not (ck.typed(f"{where}.port", port, int, "an integer") and 1 <= port <= 65535):
        ck.add(f"{where}: port out of range")
        ok = False
    default = raw.get("default", False)
    if not ck.typed(f"{where}.default", default, bool, "a boolean"):
        ok = False
    if default and any(k in raw for k in ("direction", "src", "dst", "port")):
        ck.add(f"{where}: a default rule cannot carry match fields")
        ok = False
    label = raw.get("label", "")
    if not ck.typed(f"{where}.label", label, str, "a string"):
        ok = False
    if not ok:
        return None
    return FirewallRule(action, direction, raw.get("src"), raw.get("dst"), port, default, label)


def _parse_host(ck: Checker, where: str, raw: Any) -> HostSpec | None:
    allowed = {"hostname", "address", "os_label", "role", "installed_apps", "critical_files"}
    if not ck.keys(where, raw, allowed, {"hostname", "address", "os_label", "role"}):
        return None
    ok = all(ck.typed(f"{where}.{k}", raw[k], str, "a string") for k in ("hostname", "address", "os_label"))
    try:
        if not isinstance(raw["address"], str):
            raise TypeError
        ipaddress.ip_address(raw["address"])
    except (ValueError, TypeError):
        ck.add(f"{where}: invalid address {raw['address']!r}")
        ok = False
    try:
        role = HostRole(raw["role"])
    except (ValueError, TypeError):
        ck.add(f"{where}: role must be workstation or server")
        return None
    apps = raw.get("installed_apps", [])
    if not ck.str_list(f"{where}.installed_apps", apps):
        return None
    if role is HostRole.WORKSTATION and not apps:
        ck.add(f"{where}: workstation {raw['hostname']!r} has no installed apps")
    files: list[tuple[str, str]] = []
    for i, entry in enumerate(_array(ck, f"{where}.critical_files", raw.get("critical_files", []))):
        fw = f"{where}.critical_files[{i}]"
        if not ck.keys(fw, entry, {"path", "digest"}, {"path", "digest"}):
            ok = False
            continue
        if not (isinstance(entry["path"], str) and entry["path"].startswith("/")):
            ck.add(f"{fw}: path must be absolute")
            ok = False
            continue
        if not (isinstance(entry["digest"], str) and _DIGEST.match(entry["digest"])):
            ck.add(f"{fw}: digest must be 64 lowercase hex characters")
            ok = False
            continue
        files.append((entry["path"], entry["digest"]))
    paths = [p for p, _ in files]
    for p in sorted({p for p in paths if paths.count(p) > 1}):
        ck.add(f"{where}: duplicate critical file {p!r}")
    if not ok:
        return None
    return HostSpec(raw["hostname"], raw["address"], raw["os_label"], role, frozenset(apps), tuple(files))


def _parse_service(ck: Checker, where: str, raw: Any) -> ServiceSpec | None:
    allowed = {"host", "port", "protocol_label", "banner", "version_label", "vulnerability_tags"}
    if not ck.keys(where, raw, allowed, {"host", "port", "protocol_label", "banner", "version_label"}):
        return None
    ok = all(ck.typed(f"{where}.{k}", raw[k], str, "a string")
             for k in ("host", "protocol_label", "banner", "version_label"))
    if not ck.typed(f"{where}.port", raw["port"], int, "an integer"):
        return None
    if not 1 <= raw["port"] <= 65535:
        ck.add(f"{where}: port {raw['port']} out of range 1-65535")
        ok = False
    tags = raw.get("vulnerability_tags", [])
    ok = ck.str_list(f"{where}.vulnerability_tags", tags) and ok
    if not ok:
        return None
    return ServiceSpec(raw["host"], raw["port"], raw["protocol_label"], raw["banner"],
                       raw["version_label"], frozenset(tags))


def _parse_persona(ck: Checker, where: str, raw: Any) -> PersonaProfile | None:
    allowed = {"name", "role_label", "host", "working_hours", "app_set", "interest_tags",
               "activity_rate", "documents"}
    required = {"name", "role_label", "host", "working_hours", "app_set", "activity_rate"}
    if not ck.keys(where, raw, allowed, required):
        return None
    ok = all(ck.typed(f"{where}.{k}", raw[k], str, "a string") for k in ("name", "role_label", "host"))
    hours = raw["working_hours"]
    start = end = None
    if not (isinstance(hours, list) and len(hours) == 2):
        ck.add(f"{where}.working_hours: expected [start, end]")
        ok = False
    else:
        try:
            start, end = parse_clock(hours[0]), parse_clock(hours[1])
        except ValueError as exc:
            ck.add(f"{where}.working_hours: {exc}")
            ok = False
        else:
            if not start < end:
                ck.add(f"{where}: working hours must start before they end")
                ok = False
    for key in ("app_set", "interest_tags", "documents"):
        if not ck.str_list(f"{where}.{key}", raw.get(key, [])):
            ok = False
    rate = raw["activity_rate"]
    if not ck.typed(f"{where}.activity_rate", rate, (int, float), "a number"):
        ok = False
    elif rate < 0 or rate != rate:
        ck.add(f"{where}: activity_rate must be non-negative")
        ok = False
    if not ok:
        return None
    return PersonaProfile(
        name=raw["name"], role_label=raw["role_label"], host=raw["host"],
        working_hours=(start, end), app_set=frozenset(raw["app_set"]),
        interest_tags=frozenset(raw.get("interest_tags", [])),
        activity_rate=float(rate), documents=tuple(raw.get("documents", [])),
    )


def template_from_dict(doc: Mapping[str, Any]) -> EnvironmentTemplate:
    """Build and validate a template from parsed document data."""
    ck = Checker()
    top = {"format", "id", "metadata", "slots", "topology", "hosts", "services", "personas"}
    ck.keys("environment", doc, top, {"id", "metadata", "topology", "hosts"})
    if ck.violations and any("missing key" in v for v in ck.violations):
        raise ValidationError(ck.violations)
    if not ck.typed("id", doc["id"], str, "a string"):
        raise ValidationError(ck.violations)

    meta_raw = doc["metadata"]
    metadata = BusinessFront("", "")
    if ck.keys("metadata", meta_raw, {"business_name", "sector", "contacts", "website", "street_address"},
               {"business_name", "sector"}):
        scalars = all(ck.typed(f"metadata.{k}", meta_raw.get(k, ""), str, "a string")
                      for k in ("business_name", "sector", "website", "street_address"))
        if scalars and ck.str_list("metadata.contacts", meta_raw.get("contacts", [])):
            metadata = BusinessFront(meta_raw["business_name"], meta_raw["sector"],
                                     tuple(meta_raw.get("contacts", [])),
                                     meta_raw.get("website", ""), meta_raw.get("street_address", ""))

    slots: list[ParameterSlot] = []
    for i, raw in enumerate(_array(ck, "slots", doc.get("slots", []))):
        where = f"slots[{i}]"
        if not ck.keys(where, raw, {"name", "domain", "default", "description"}, {"name", "domain"}):
            continue
        if not (ck.typed(f"{where}.name", raw["name"], str, "a string")
                and ck.str_list(f"{where}.domain", raw["domain"])):
            continue
        if not raw["domain"]:
            ck.add(f"{where}: domain of slot {raw['name']!r} is empty")
            continue
        if len(set(raw["domain"])) != len(raw["domain"]):
            ck.add(f"{where}: domain of slot {raw['name']!r} repeats a value")
        default = raw.get("default")
        if default is not None and default not in raw["domain"]:
            ck.add(f"{where}: default {default!r} of slot {raw['name']!r} not in its domain")
        slots.append(ParameterSlot(raw["name"], tuple(raw["domain"]), default, str(raw.get("description", ""))))
    names = [s.name for s in slots]
    for n in sorted({n for n in names if names.count(n) > 1}):
        ck.add(f"duplicate slot name {n!r}")
    slot_map = {s.name: s for s in slots}

    topology = _parse_topology(ck, doc["topology"], slot_map)

    hosts = [h for i, raw in enumerate(_array(ck, "hosts", doc["hosts"]))
             if (h := _parse_host(ck, f"hosts[{i}]", raw)) is not None]
    services = [s for i, raw in enumerate(_array(ck, "services", doc.get("services", [])))
                if (s := _parse_service(ck, f"services[{i}]", raw)) is not None]
    personas = [p for i, raw in enumerate(_array(ck, "personas", doc.get("personas", [])))
                if (p := _parse_persona(ck, f"personas[{i}]", raw)) is not None]

    _check_cross_refs(ck, hosts, services, personas, topology)
    for where, text in _templated_strings(hosts, services, metadata):
        for name in _placeholders(text):
            if name not in slot_map:
                ck.add(f"{where}: placeholder ${{{name}}} names no slot")

    if ck.violations:
        raise ValidationError(ck.violations)
    return EnvironmentTemplate(doc["id"], tuple(hosts), tuple(services), topology,
                               tuple(personas), tuple(slots), metadata)


def _array(ck: Checker, where: str, value: Any) -> list:
    if not isinstance(value, list):
        ck.add(f"{where}: expected an array of tables")
        return []
    return value


def _parse_topology(ck: Checker, raw: Any, slots: Mapping[str, ParameterSlot]) -> TopologyTemplate:
    empty = TopologyTemplate((), "", {})
    if not ck.keys("topology", raw, {"subnets", "perimeter", "policies"}, {"subnets", "perimeter", "policies"}):
        return empty
    if not (ck.str_list("topology.subnets", raw["subnets"])
            and ck.typed("topology.perimeter", raw["perimeter"], str, "a string")
            and ck.typed("topology.policies", raw["policies"], dict, "a table")):
        return empty
    nets = []
    for s in raw["subnets"]:
        try:
            nets.append(ipaddress.ip_network(s))
        except ValueError:
            ck.add(f"topology.subnets: invalid network {s!r}")
    for i, a in enumerate(nets):
        for b in nets[i + 1:]:
            if a.overlaps(b):
                ck.add(f"topology.subnets: {a} overlaps {b}")
    policies: dict[str, tuple[FirewallRule, ...]] = {}
    for name, rules_raw in raw["policies"].items():
        where = f"topology.policies.{name}"
        if not isinstance(rules_raw, list) or not rules_raw:
            ck.add(f"{where}: expected a nonempty array of rules")
            continue
        rules = [_parse_rule(ck, f"{where}[{i}]", r) for i, r in enumerate(rules_raw)]
        if any(r is None for r in rules):
            continue
        if not rules[-1].default:
            ck.add(f"{where}: rule list must end with an explicit default rule")
        if any(r.default for r in rules[:-1]):
            ck.add(f"{where}: default rule must be last")
        policies[name] = tuple(rules)
    expr = raw["perimeter"]
    refs = _placeholders(expr)
    unknown = [r for r in refs if r not in slots]
    for r in unknown:
        ck.add(f"topology.perimeter: placeholder ${{{r}}} names no slot")
    if not unknown:
        for values in _combinations([slots[r] for r in dict.fromkeys(refs)]):
            chosen = substitute(expr, values)
            if chosen not in policies:
                ck.add(f"topology.perimeter resolves to unknown policy {chosen!r}")
    return TopologyTemplate(tuple(raw["subnets"]), expr, policies)


def _combinations(slots: list[ParameterSlot]) -> Iterable[dict[str, str]]:
    if not slots:
        yield {}
        return
    head, rest = slots[0], slots[1:]
    for v in head.domain:
        for tail in _combinations(rest):
            yield {head.name: v, **tail}


def _check_cross_refs(ck, hosts, services, personas, topology) -> None:
    names = [h.hostname for h in hosts]
    for n in sorted({n for n in names if names.count(n) > 1}):
        ck.add(f"duplicate hostname {n!r}")
    addrs = [h.address for h in hosts]
    for a in sorted({a for a in addrs if addrs.count(a) > 1}):
        ck.add(f"duplicate host address {a!r}")
    nets = []
    for s in topology.subnets:
        try:
            nets.append(ipaddress.ip_network(s))
        except ValueError:
            pass
    for h in hosts:
        n = sum(ipaddress.ip_address(h.address) in net for net in nets)
        if n != 1:
            ck.add(f"host {h.hostname!r} address {h.address} lies in {n} subnets, expected exactly 1")
    by_name = {h.hostname: h for h in hosts}
    seen = set()
    for s in services:
        if s.host not in by_name:
            ck.add(f"service {s.host}:{s.port} references unknown host {s.host!r}")
        if (s.host, s.port) in seen:
            ck.add(f"duplicate service {s.host}:{s.port}")
        seen.add((s.host, s.port))
    pnames = [p.name for p in personas]
    for n in sorted({n for n in pnames if pnames.count(n) > 1}):
        ck.add(f"duplicate persona name {n!r}")
    for p in personas:
        host = by_name.get(p.host)
        if host is None:
            ck.add(f"persona {p.name!r} references unknown host {p.host!r}")
            continue
        extra = sorted(p.app_set - host.installed_apps)
        if extra:
            ck.add(f"persona {p.name!r} uses apps not installed on {p.host}: {', '.join(extra)}")
        files = host.file_digests()
        for d in p.documents:
            if d not in files:
                ck.add(f"persona {p.name!r} document {d!r} is not a critical file of {p.host}")


def _templated_strings(hosts, services, metadata) -> Iterable[tuple[str, str]]:
    for h in hosts:
        yield f"host {h.hostname} os_label", h.os_label
    for s in services:
        yield f"service {s.host}:{s.port} banner", s.banner
        yield f"service {s.host}:{s.port} version_label", s.version_label
    for text in metadata.strings():
        yield "metadata", text


# --------------------------------------------------------------------------
# instantiation


def resolve_assignment(template: EnvironmentTemplate, assignment: ParameterAssignment) -> dict[str, str]:
    values: dict[str, str] = {}
    known = {s.name for s in template.parameter_slots}
    for name in assignment:
        if name not in known:
            raise DomainViolation(name, assignment[name])
    for slot in template.parameter_slots:
        if slot.name in assignment:
            value = assignment[slot.name]
            if value not in slot.domain:
                raise DomainViolation(slot.name, value)
            values[slot.name] = value
        elif slot.default is not None:
            values[slot.name] = slot.default
        else:
            raise UnboundSlot(slot.name)
    return values


def instantiate(template: EnvironmentTemplate, assignment: ParameterAssignment, seed: int) -> EnvironmentInstance:
    if not (isinstance(seed, int) and 0 <= seed < 2**64):
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    values = resolve_assignment(template, assignment)
    hosts = tuple(replace(h, os_label=substitute(h.os_label, values)) for h in template.hosts)
    services = tuple(
        replace(s, banner=substitute(s.banner, values), version_label=substitute(s.version_label, values))
        for s in template.services
    )
    policy_name = substitute(template.topology.perimeter, values)
    topology = NetworkTopology(template.topology.subnets, policy_name, template.topology.policies[policy_name])
    m = template.metadata
    metadata = BusinessFront(
        substitute(m.business_name, values), substitute(m.sector, values),
        tuple(substitute(c, values) for c in m.contacts),
        substitute(m.website, values), substitute(m.street_address, values),
    )
    return EnvironmentInstance(template.id, values, hosts, services, topology,
                               template.personas, metadata, seed, template)


def iterate(instance: EnvironmentInstance, revised: ParameterAssignment) -> EnvironmentInstance:
    """Refine an instance: same template and seed, with some slots reassigned."""
    return instantiate(instance.template, {**instance.assignment, **revised}, instance.seed)


def diff_instances(a: EnvironmentInstance, b: EnvironmentInstance) -> ParameterDelta:
    if a.template_id != b.template_id:
        raise TemplateMismatch(f"instances of {a.template_id!r} and {b.template_id!r} are not comparable")
    return {
        name: (a.assignment.get(name), b.assignment.get(name))
        for name in sorted(set(a.assignment) | set(b.assignment))
        if a.assignment.get(name) != b.assignment.get(name)
    }
