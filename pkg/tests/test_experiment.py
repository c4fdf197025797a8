from __future__ import annotations

import dataclasses
import functools

import pytest

from camosim import fixtureset as F
from camosim.audit import AuditReport, FingerprintCheck, Verdict
from camosim.errors import ConstructValidityError, MissingArtifact, SpecError
from camosim.experiment import (
    load_experiment,
    run_experiment,
    validate_experiment,
    validity_checklist,
)

from conftest import raw_doc
from oracles import exploit_outcome


def write_spec(tmp_path, **over):
    fields = {
        "template": f'"{F.TRAVELCO}"',
        "scenario": f'"{F.RANSOMWARE}"',
        "independent_variables": '["perimeter"]',
        "control": '"consumer"',
        "baseline_days": "1",
        "attack_start": "37800",
        "seeds": "[11, 12, 13]",
        "replication": "3",
    }
    arms = over.pop("arms", {"consumer": {"perimeter": "consumer"}, "advanced": {"perimeter": "advanced"}})
    fields.update({k: v for k, v in over.items()})
    body = ['format = "camosim-experiment/1"'] + [f"{k} = {v}" for k, v in fields.items() if v is not None]
    for name, a in arms.items():
        body.append(f"[arms.{name}]")
        body += [f'{k} = "{v}"' for k, v in a.items()]
    p = tmp_path / "x.exp"
    p.write_text("\n".join(body) + "\n")
    return p


@functools.lru_cache(maxsize=None)
def shipped():
    return run_experiment(load_experiment(F.PERIMETER_AB))


def test_spec_loads_relative_paths():
    spec = load_experiment(F.PERIMETER_AB)
    assert spec.template_path == F.TRAVELCO
    assert spec.run_seeds == (11, 12, 13)
    assert spec.horizon == 86400


def test_outcomes_match_exploit_oracle():
    report = shipped()
    env, scn = raw_doc(F.TRAVELCO), raw_doc(F.RANSOMWARE)
    for arm in ("consumer", "advanced"):
        expected = exploit_outcome(env, scn, {"perimeter": arm}) == "Success"
        rows = report.outcomes(arm)
        assert len(rows) == 3 and all(r["compromised"] is expected for r in rows)
    assert expected is False  # advanced is blocked at the perimeter
    assert all(r["time_to_compromise"] is not None for r in report.outcomes("consumer"))
    assert all(r["time_to_compromise"] is None for r in report.outcomes("advanced"))


def test_shipped_validity_passes():
    v = shipped().validity
    assert [x.verdict for x in (v.internal, v.external, v.construct)] == [Verdict.PASS] * 3
    assert all(x.evidence for x in (v.internal, v.external, v.construct))


def test_one_row_per_arm_and_seed():
    rows = shipped().to_dict()["outcomes"]
    assert sorted((r["arm"], r["seed"]) for r in rows) == sorted(
        (a, s) for a in ("consumer", "advanced") for s in (11, 12, 13))


def test_equal_seeds_identical_outcomes(tmp_path):
    report = run_experiment(load_experiment(write_spec(tmp_path, seeds="[5, 5, 5]")))
    for arm in ("consumer", "advanced"):
        rows = report.outcomes(arm)
        assert rows[0] == rows[1] == rows[2]


def test_report_bytes_reproducible(tmp_path):
    spec = load_experiment(F.PERIMETER_AB)
    run_experiment(spec, tmp_path / "a")
    run_experiment(spec, tmp_path / "b")
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    for name in ("run.manifest", "events.jsonl", "whitelist.wl", "flags.jsonl", "report.json"):
        assert (tmp_path / "a" / "consumer" / "seed-11" / name).is_file()


def test_undeclared_slot_rejected(tmp_path):
    arms = {"consumer": {"perimeter": "consumer"},
            "advanced": {"perimeter": "advanced", "storefront_version": "2.4.51"}}
    spec = load_experiment(write_spec(tmp_path, arms=arms))
    with pytest.raises(ConstructValidityError):
        validate_experiment(spec)
    with pytest.raises(ConstructValidityError):
        run_experiment(spec)


@pytest.mark.parametrize("over", [
    {"seeds": "[1]"},
    {"control": '"nobody"'},
    {"independent_variables": '["colour"]'},
    {"attack_start": "999999"},
    {"seeds": None},
])
def test_bad_specs(tmp_path, over):
    with pytest.raises(SpecError):
        validate_experiment(load_experiment(write_spec(tmp_path, **over)))


def test_internal_fail_on_digest_mismatch():
    arts = [r.artifacts() for r in shipped().runs]
    arts[0] = dataclasses.replace(arts[0], replay_digest="0" * 64)
    v = validity_checklist(arts, ["perimeter"])
    assert v.internal.verdict is Verdict.FAIL
    assert "DIFFERS" in v.internal.evidence[0]


def test_external_fail_on_audit_fail():
    arts = [r.artifacts() for r in shipped().runs]
    bad = AuditReport((FingerprintCheck("C4", "jitter", Verdict.FAIL, "every gap 1 s"),))
    arts[-1] = dataclasses.replace(arts[-1], audit=bad)
    v = validity_checklist(arts, ["perimeter"])
    assert v.external.verdict is Verdict.FAIL and v.internal.verdict is Verdict.PASS


def test_construct_fail_and_missing_artifacts():
    arts = [r.artifacts() for r in shipped().runs]
    assert validity_checklist(arts, []).construct.verdict is Verdict.FAIL
    with pytest.raises(MissingArtifact):
        validity_checklist([dataclasses.replace(arts[0], events_digest=None)], ["perimeter"])
    with pytest.raises(MissingArtifact):
        validity_checklist([], ["perimeter"])
