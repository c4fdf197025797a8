"""``camosim`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 runtime error.
Log verbosity comes from ``CAMOSIM_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from camosim import __version__
from camosim.attack import load_scenario
from camosim.audit import audit
from camosim.baseline import DEFAULT_SCAN_PERIOD, build_baseline, load_whitelist
from camosim.detect import NO_DEVIATION, snr
from camosim.envmodel import instantiate, load_template
from camosim.errors import (
    CamoSimError,
    DomainViolation,
    NotFound,
    ParseError,
    SpecError,
    TemplateMismatch,
    UnboundSlot,
    ValidationError,
)
from camosim.experiment import analyze, load_experiment, run_experiment, run_manifest, run_report, write_run_dir
from camosim.persona import DAY
from camosim.telemetry import load_lenient

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3
VALIDATION_ERRORS = (NotFound, ParseError, ValidationError, SpecError, DomainViolation, UnboundSlot, TemplateMismatch)

log = logging.getLogger("camosim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _params(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise UsageError(f"--params expects KEY=VALUE, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def _print_json(data) -> None:
    print(json.dumps(data, sort_keys=True, indent=2))


def cmd_validate(args) -> int:
    t = load_template(args.template)
    print(f"OK {t.id}: {len(t.hosts)} hosts, {len(t.services)} services, {len(t.personas)} personas, "
          f"slots {', '.join(s.name for s in t.parameter_slots) or 'none'}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    if args.days < 1 or args.seed < 0 or args.period <= 0:
        raise UsageError("--days and --period must be positive and --seed non-negative")
    template = load_template(args.template)
    instance = instantiate(template, _params(args.params), args.seed)
    wl, stream = build_baseline(instance, args.days, args.seed, period=args.period)
    out = Path(args.out)
    manifest = run_manifest(instance, Path(args.template), horizon=args.days * DAY, days=args.days, period=args.period)
    anomalies, vector = analyze(stream, wl, None)
    report = run_report(instance_id=instance.id, anomalies=anomalies, vector=vector,
                        score=snr(anomalies, stream), audit_report=audit(instance, stream))
    write_run_dir(out, manifest, stream, wl, report)
    print(f"baseline {instance.id}: {len(stream)} events, {len(wl.flows)} flow patterns, "
          f"{len(wl.logs)} log templates, {len(wl.ledger)} anticipated changes -> {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    spec = load_experiment(args.spec)
    report = run_experiment(spec, args.out)
    for row in report.to_dict()["outcomes"]:
        ttc = row["time_to_compromise"]
        print(f"{row['arm']:>12} seed {row['seed']:<6} compromised={str(row['compromised']).lower():<5} "
              f"ttc={'-' if ttc is None else f'{ttc}s':<6} anomalies={row['anomaly_count']:<4} audit={row['audit']}")
    for name, v in report.validity.to_dict().items():
        print(f"{name} validity: {v['verdict']}")
    print(f"report -> {Path(args.out) / 'report.json'}")
    return EXIT_OK


def _read_manifest(run_dir: Path) -> dict:
    path = run_dir / "run.manifest"
    if not path.is_file():
        raise NotFound(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"run.manifest: {exc.msg}", line=exc.lineno) from None


def _instance_for(manifest: dict):
    return instantiate(load_template(manifest["template"]), manifest["assignment"], manifest["seed"])


def cmd_audit(args) -> int:
    run_dir = Path(args.run_dir)
    manifest = _read_manifest(run_dir)
    events, errors = load_lenient(run_dir / "events.jsonl")
    for e in errors:
        log.warning("events.jsonl: %s", e)
    report = audit(_instance_for(manifest), events)
    for c in report.checks:
        print(f"{c.id} {c.verdict.value:<13} {c.description}: {c.evidence}")
    print(f"overall: {report.verdict.value}")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / "run.manifest").exists() and (run_dir / "report.json").is_file():
        # experiment directory: show the aggregate report
        print((run_dir / "report.json").read_text(encoding="utf-8"), end="")
        return EXIT_OK
    manifest = _read_manifest(run_dir)
    wl = load_whitelist(run_dir / "whitelist.wl")
    events, errors = load_lenient(run_dir / "events.jsonl")
    scenario = load_scenario(manifest["scenario"]) if manifest.get("scenario") else None
    anomalies, vector = analyze(events, wl, scenario)
    anomalies.errors.extend(errors)
    instance = _instance_for(manifest)
    score = snr(anomalies, events)
    doc = run_report(instance_id=instance.id, anomalies=anomalies, vector=vector, score=score,
                     audit_report=audit(instance, events))
    (run_dir / "report.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    if score is NO_DEVIATION:
        print("no deviation")
    else:
        print(f"anomalies={len(anomalies)} precision={score.precision:.3f} recall={score.recall:.3f}")
    v = vector.to_dict()
    print(f"vector: entry={v['entry']} vehicle={v['vehicle']}")
    if errors:
        print(f"{len(errors)} unparseable record(s); first: {errors[0]}")
    return EXIT_OK


def cmd_verify_fixtures(args) -> int:
    from camosim.fixtureset import verify_fixtures

    report = verify_fixtures()
    for r in report.results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.path}: {r.detail}")
    return EXIT_OK if report.ok else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="camosim", description="Deterministic camouflaged-honeynet experiment harness.")
    p.add_argument("--version", action="version", version=f"camosim {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("validate", help="load and validate an environment template")
    s.add_argument("template")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("baseline", help="run a baseline and write its run directory")
    s.add_argument("template")
    s.add_argument("--params", action="append", default=[], metavar="K=V", help="slot assignment (repeatable)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--days", type=int, default=1)
    s.add_argument("--period", type=int, default=DEFAULT_SCAN_PERIOD, help="integrity scan period in seconds")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("run", help="run an experiment spec")
    s.add_argument("spec")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("audit", help="camouflage audit of a run directory")
    s.add_argument("run_dir")
    s.set_defaults(func=cmd_audit)

    s = sub.add_parser("report", help="detect and score a run directory, writing report.json")
    s.add_argument("run_dir")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("verify-fixtures", help="check shipped fixture digests and load every fixture")
    s.set_defaults(func=cmd_verify_fixtures)
    return p


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("CAMOSIM_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"camosim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VALIDATION_ERRORS as exc:
        print(f"camosim: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (CamoSimError, OSError, ValueError) as exc:
        print(f"camosim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
