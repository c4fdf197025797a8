"""Controlled A/B experiments over environment instances.

An experiment fixes a template and an attack scenario, then runs every arm
(a parameter assignment) for every seed: build the arm's own baseline,
replay the same persona day with the scenario injected, detect, audit, and
score. The validity checklist turns the collected artifacts into
internal/external/construct verdicts.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from camosim import __version__
from camosim._docs import Checker, read_toml
from camosim.attack import AttackScenario, SignatureDB, exploit_check, inject, load_scenario, load_signatures, scan_signature
from camosim.audit import AuditReport, Verdict, audit
from camosim.baseline import (
    DEFAULT_SCAN_PERIOD,
    IntegrityMonitor,
    Whitelist,
    build_baseline,
    save_whitelist,
)
from camosim.detect import AnomalySet, VectorReport, detect, identify_vector, reconstruct_trace, snr
from camosim.envmodel import (
    EnvironmentInstance,
    EnvironmentTemplate,
    diff_instances,
    instantiate,
    load_template,
)
from camosim.errors import CamoSimError, ConstructValidityError, MissingArtifact, SpecError, ValidationError
from camosim.persona import DAY, persona_activity
from camosim.sim import run
from camosim.telemetry import IntegrityFlag, TelemetryStream, dumps_event, export

log = logging.getLogger(__name__)

EXPERIMENT_FORMAT = "camosim-experiment/1"
REPORT_SCHEMA = 1


@dataclass(frozen=True)
class ExperimentSpec:
    template_path: Path
    scenario_path: Path
    independent_variables: tuple[str, ...]
    control: str
    arms: Mapping[str, Mapping[str, str]]
    baseline_days: int = 1
    horizon: int = DAY
    seeds: tuple[int, ...] = (0,)
    replication: int = 1
    attack_start: int = 0
    scan_period: int = DEFAULT_SCAN_PERIOD
    signatures_path: Path | None = None

    @property
    def run_seeds(self) -> tuple[int, ...]:
        return self.seeds[: self.replication]


def load_experiment(path: str | os.PathLike) -> ExperimentSpec:
    doc = read_toml(path, EXPERIMENT_FORMAT)
    base = Path(path).resolve().parent
    ck = Checker()
    allowed = {"format", "template", "scenario", "signatures", "independent_variables", "control", "arms",
               "baseline_days", "horizon", "seeds", "replication", "attack_start", "scan_period"}
    required = {"template", "scenario", "independent_variables", "control", "arms", "seeds"}
    if not ck.keys("experiment", doc, allowed, required):
        raise SpecError("; ".join(ck.violations))
    for key in ("template", "scenario", "control"):
        ck.typed(key, doc[key], str, "a string")
    ck.str_list("independent_variables", doc["independent_variables"])
    for key in ("baseline_days", "horizon", "replication", "attack_start", "scan_period"):
        if key in doc:
            ck.typed(key, doc[key], int, "an integer")
    seeds = doc["seeds"]
    if not (isinstance(seeds, list) and seeds and all(isinstance(s, int) and not isinstance(s, bool)
                                                        and 0 <= s < 2**64 for s in seeds)):
        ck.add("seeds: expected a nonempty list of unsigned 64-bit integers")
    arms = doc["arms"]
    if not isinstance(arms, dict) or not arms:
        ck.add("arms: expected a table of named assignments")
    else:
        for name, assignment in arms.items():
            if not (isinstance(assignment, dict) and all(isinstance(v, str) for v in assignment.values())):
                ck.add(f"arms.{name}: expected slot = \"value\" pairs")
    if ck.violations:
        raise SpecError("; ".join(ck.violations))
    spec = ExperimentSpec(
        template_path=(base / doc["template"]).resolve(),
        scenario_path=(base / doc["scenario"]).resolve(),
        independent_variables=tuple(doc["independent_variables"]),
        control=doc["control"],
        arms={name: dict(a) for name, a in arms.items()},
        baseline_days=doc.get("baseline_days", 1),
        horizon=doc.get("horizon", DAY * doc.get("baseline_days", 1)),
        seeds=tuple(seeds),
        replication=doc.get("replication", 1),
        attack_start=doc.get("attack_start", 0),
        scan_period=doc.get("scan_period", DEFAULT_SCAN_PERIOD),
        signatures_path=(base / doc["signatures"]).resolve() if "signatures" in doc else None,
    )
    check_spec_shape(spec)
    return spec


def check_spec_shape(spec: ExperimentSpec) -> None:
    problems = []
    if spec.control not in spec.arms:
        problems.append(f"control arm {spec.control!r} is not among the arms")
    if spec.baseline_days < 1:
        problems.append("baseline_days must be at least 1")
    if not 0 <= spec.horizon <= spec.baseline_days * DAY:
        problems.append("horizon must lie within the baseline days so persona activity is covered")
    if spec.replication < 1 or len(spec.seeds) < spec.replication:
        problems.append(f"{len(spec.seeds)} seed(s) cannot cover replication {spec.replication}")
    if spec.scan_period <= 0:
        problems.append("scan_period must be positive")
    if not 0 <= spec.attack_start < spec.horizon:
        problems.append("attack_start must fall inside the horizon")
    if problems:
        raise SpecError("; ".join(problems))


def validate_experiment(spec: ExperimentSpec) -> tuple[EnvironmentTemplate, AttackScenario]:
    """Load the inputs and refuse any arm that differs from control outside the declared variables."""
    check_spec_shape(spec)
    template = load_template(spec.template_path)
    scenario = load_scenario(spec.scenario_path)
    slots = {s.name for s in template.parameter_slots}
    unknown = [v for v in spec.independent_variables if v not in slots]
    if unknown:
        raise SpecError(f"independent variables name no slot: {', '.join(unknown)}")
    if scenario.target_template != template.id:
        raise SpecError(f"scenario targets {scenario.target_template!r}, template is {template.id!r}")
    try:
        control = instantiate(template, spec.arms[spec.control], 0)
        for name, assignment in spec.arms.items():
            delta = diff_instances(control, instantiate(template, assignment, 0))
            stray = sorted(set(delta) - set(spec.independent_variables))
            if stray:
                raise ConstructValidityError(
                    f"arm {name!r} differs from control {spec.control!r} in undeclared slot(s): {', '.join(stray)}")
    except (ValidationError, ConstructValidityError):
        raise
    except CamoSimError as exc:
        raise SpecError(f"invalid arm assignment: {exc}") from exc
    return template, scenario


# --------------------------------------------------------------------------
# runs


def stream_digest(stream) -> str:
    h = hashlib.sha256()
    for event in stream:
        h.update(dumps_event(event).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def treatment_run(instance: EnvironmentInstance, scenario: AttackScenario | None, wl: Whitelist,
                  *, days: int, seed: int, horizon: int, attack_start: int) -> TelemetryStream:
    """Replay the baseline persona days with the scenario injected."""
    inputs, _ = persona_activity(instance, days, seed)
    if scenario is not None:
        inputs = inputs + inject(scenario, instance, attack_start)
    stream, _ = run(instance, inputs, horizon, monitor=IntegrityMonitor(wl, wl.period))
    return stream


@dataclass
class ArmArtifacts:
    """What the validity checklist needs from one arm x seed run."""

    arm: str
    seed: int
    events_digest: str | None
    replay_digest: str | None
    baseline_deviations: int | None
    audit: AuditReport | None
    delta: Mapping[str, tuple[str, str]] | None


@dataclass
class ArmRun:
    arm: str
    seed: int
    instance: EnvironmentInstance
    whitelist: Whitelist
    baseline: TelemetryStream
    stream: TelemetryStream
    anomalies: AnomalySet
    vector: VectorReport
    score: Any
    audit: AuditReport
    exploit: Any
    compromised: bool
    time_to_compromise: int | None
    signature_match: str | None
    events_digest: str
    replay_digest: str
    baseline_deviations: int
    delta: dict[str, tuple[str, str]] = field(default_factory=dict)

    def artifacts(self) -> ArmArtifacts:
        return ArmArtifacts(self.arm, self.seed, self.events_digest, self.replay_digest,
                            self.baseline_deviations, self.audit, self.delta)

    def outcome(self) -> dict[str, Any]:
        return {
            "arm": self.arm,
            "seed": self.seed,
            "instance": self.instance.id,
            "exploit": repr(self.exploit) if self.exploit.ok else self.exploit.reason.value,
            "compromised": self.compromised,
            "time_to_compromise": self.time_to_compromise,
            "anomaly_count": len(self.anomalies),
            "snr": self.score.to_dict(),
            "vector": self.vector.to_dict(),
            "signature_match": self.signature_match,
            "audit": self.audit.verdict.value,
            "events_digest": self.events_digest,
        }


def run_report(*, instance_id: str, anomalies: AnomalySet, vector: VectorReport,
               score, audit_report: AuditReport | None) -> dict[str, Any]:
    """The report.json document of a single run directory."""
    trace = reconstruct_trace(anomalies)
    return {
        "schema": REPORT_SCHEMA,
        "instance": instance_id,
        "anomalies": [
            {"seq": a.event.seq, "time": a.time, "reason": a.deviation.reason.value, "detail": a.deviation.detail}
            for a in anomalies
        ],
        "trace": {"start": trace.start, "end": trace.end, "events": [a.event.seq for a in trace]},
        "vector": vector.to_dict(),
        "snr": score.to_dict(),
        "audit": audit_report.to_dict() if audit_report is not None else None,
        "parse_errors": [str(e) for e in anomalies.errors],
    }


def fingerprints_of(scenario: AttackScenario | None) -> dict[str, str]:
    return {scenario.payload.fingerprint: scenario.payload.id} if scenario is not None else {}


def analyze(stream, wl: Whitelist, scenario: AttackScenario | None):
    anomalies = detect(stream, wl)
    trace = reconstruct_trace(anomalies)
    vector = (identify_vector(trace, addresses=wl.addresses, fingerprints=fingerprints_of(scenario))
              if trace.items else VectorReport(None, None))
    return anomalies, vector


def run_arm(spec: ExperimentSpec, template: EnvironmentTemplate, scenario: AttackScenario, arm: str, seed: int,
            signatures: SignatureDB | None = None, control: EnvironmentInstance | None = None) -> ArmRun:
    instance = instantiate(template, spec.arms[arm], seed)
    wl, base = build_baseline(instance, spec.baseline_days, seed, period=spec.scan_period)
    kwargs = dict(days=spec.baseline_days, seed=seed, horizon=spec.horizon, attack_start=spec.attack_start)
    stream = treatment_run(instance, scenario, wl, **kwargs)
    replay = treatment_run(instance, scenario, wl, **kwargs)
    anomalies, vector = analyze(stream, wl, scenario)
    outcome = exploit_check(scenario, instance)
    tag = f"attacker:{scenario.id}"
    flags = [e for e in stream if isinstance(e.record, IntegrityFlag) and e.actor == tag]
    compromised = outcome.ok and bool(flags)
    ttc = min(e.record.time for e in flags) - spec.attack_start if compromised else None
    sig = None
    if signatures is not None:
        m = scan_signature(scenario.payload, signatures)
        sig = m.signature_id if m else None
    return ArmRun(
        arm=arm, seed=seed, instance=instance, whitelist=wl, baseline=base, stream=stream,
        anomalies=anomalies, vector=vector, score=snr(anomalies, stream), audit=audit(instance, stream),
        exploit=outcome, compromised=compromised, time_to_compromise=ttc, signature_match=sig,
        events_digest=stream_digest(stream), replay_digest=stream_digest(replay),
        baseline_deviations=len(detect(base, wl)),
        delta=diff_instances(control, instance) if control is not None else {},
    )


# --------------------------------------------------------------------------
# validity


@dataclass(frozen=True)
class ValidityVerdict:
    name: str
    verdict: Verdict
    evidence: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"verdict": self.verdict.value, "evidence": list(self.evidence)}


@dataclass(frozen=True)
class ValidityReport:
    internal: ValidityVerdict
    external: ValidityVerdict
    construct: ValidityVerdict

    def to_dict(self) -> dict:
        return {v.name: v.to_dict() for v in (self.internal, self.external, self.construct)}

    @property
    def all_pass(self) -> bool:
        return all(v.verdict is Verdict.PASS for v in (self.internal, self.external, self.construct))


def validity_checklist(artifacts: Sequence[ArmArtifacts], independent_variables: Sequence[str]) -> ValidityReport:
    if not artifacts:
        raise MissingArtifact("no arm runs to assess")
    for a in artifacts:
        for name in ("events_digest", "replay_digest", "baseline_deviations", "audit", "delta"):
            if getattr(a, name) is None:
                raise MissingArtifact(f"arm {a.arm!r} seed {a.seed}: missing {name}")

    internal_ev, internal_ok = [], True
    for a in artifacts:
        same = a.events_digest == a.replay_digest
        internal_ok &= same and a.baseline_deviations == 0
        internal_ev.append(f"{a.arm}/seed-{a.seed}: replay {'identical' if same else 'DIFFERS'} "
                           f"({a.events_digest[:12]} vs {a.replay_digest[:12]}), "
                           f"baseline deviations {a.baseline_deviations}")

    external_ev, external_ok = [], True
    for a in artifacts:
        failed = [c.id for c in a.audit.checks if c.verdict is Verdict.FAIL]
        external_ok &= not failed
        external_ev.append(f"{a.arm}/seed-{a.seed}: audit {a.audit.verdict.value}"
                           + (f" (failed {', '.join(failed)})" if failed else ""))

    declared = set(independent_variables)
    construct_ev, construct_ok = [], True
    for a in artifacts:
        stray = sorted(set(a.delta) - declared)
        construct_ok &= not stray
        changed = ", ".join(f"{k}: {v[0]}->{v[1]}" for k, v in sorted(a.delta.items())) or "none"
        construct_ev.append(f"{a.arm}/seed-{a.seed}: delta vs control [{changed}]"
                            + (f"; undeclared {', '.join(stray)}" if stray else ""))

    def verdict(ok):
        return Verdict.PASS if ok else Verdict.FAIL

    return ValidityReport(
        ValidityVerdict("internal", verdict(internal_ok), tuple(internal_ev)),
        ValidityVerdict("external", verdict(external_ok), tuple(external_ev)),
        ValidityVerdict("construct", verdict(construct_ok), tuple(construct_ev)),
    )


@dataclass
class ExperimentReport:
    template_id: str
    scenario_id: str
    independent_variables: tuple[str, ...]
    control: str
    runs: list[ArmRun]
    validity: ValidityReport

    def outcomes(self, arm: str) -> list[dict[str, Any]]:
        return [r.outcome() for r in self.runs if r.arm == arm]

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": REPORT_SCHEMA,
            "experiment": {
                "template": self.template_id,
                "scenario": self.scenario_id,
                "independent_variables": list(self.independent_variables),
                "control": self.control,
            },
            "tool_version": __version__,
            "outcomes": [r.outcome() for r in self.runs],
            "validity": self.validity.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def run_experiment(spec: ExperimentSpec, out_dir: str | os.PathLike | None = None) -> ExperimentReport:
    template, scenario = validate_experiment(spec)
    signatures = load_signatures(spec.signatures_path) if spec.signatures_path else None
    runs: list[ArmRun] = []
    for seed in spec.run_seeds:
        control = instantiate(template, spec.arms[spec.control], seed)
        for arm in spec.arms:
            try:
                runs.append(run_arm(spec, template, scenario, arm, seed, signatures, control))
            except CamoSimError as exc:
                raise CamoSimError(f"arm {arm!r} seed {seed}: {exc}") from exc
            log.info("arm %s seed %d: compromised=%s", arm, seed, runs[-1].compromised)
    runs.sort(key=lambda r: (list(spec.arms).index(r.arm), spec.run_seeds.index(r.seed)))
    validity = validity_checklist([r.artifacts() for r in runs], spec.independent_variables)
    report = ExperimentReport(template.id, scenario.id, spec.independent_variables, spec.control, runs, validity)
    if out_dir is not None:
        write_experiment(report, spec, Path(out_dir))
    return report


# --------------------------------------------------------------------------
# run directories


def run_manifest(instance: EnvironmentInstance, template_path: Path, *, horizon: int, days: int, period: int,
                 scenario_path: Path | None = None, attack_start: int | None = None) -> dict[str, Any]:
    return {
        "schema": REPORT_SCHEMA,
        "tool_version": __version__,
        "instance": instance.id,
        "template_id": instance.template_id,
        "template": str(Path(template_path).resolve()),
        "assignment": dict(sorted(instance.assignment.items())),
        "seed": instance.seed,
        "horizon": horizon,
        "days": days,
        "scan_period": period,
        "scenario": str(Path(scenario_path).resolve()) if scenario_path else None,
        "attack_start": attack_start,
    }


def _write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def write_run_dir(out: Path, manifest: Mapping[str, Any], stream, wl: Whitelist,
                  report: Mapping[str, Any] | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "run.manifest", manifest)
    export(stream, out / "events.jsonl")
    save_whitelist(wl, out / "whitelist.wl")
    export([e for e in stream if isinstance(e.record, IntegrityFlag)], out / "flags.jsonl")
    if report is not None:
        _write_json(out / "report.json", report)


def write_experiment(report: ExperimentReport, spec: ExperimentSpec, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for r in report.runs:
        manifest = run_manifest(r.instance, spec.template_path, horizon=spec.horizon, days=spec.baseline_days,
                                period=spec.scan_period, scenario_path=spec.scenario_path,
                                attack_start=spec.attack_start)
        doc = run_report(instance_id=r.instance.id, anomalies=r.anomalies, vector=r.vector, score=r.score,
                         audit_report=r.audit)
        write_run_dir(out / r.arm / f"seed-{r.seed}", manifest, r.stream, r.whitelist, doc)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
