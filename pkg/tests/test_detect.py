from __future__ import annotations

import functools

import pytest

from camosim import fixtureset as F
from camosim.detect import (
    NO_DEVIATION,
    AttackTrace,
    detect,
    identify_vector,
    reconstruct_trace,
    snr,
)
from camosim.errors import NoTrace
from camosim.experiment import treatment_run
from camosim.telemetry import IntegrityFlag, TelemetryEvent, dumps_event

from conftest import ATTACK_START, baseline, scenario
from oracles import tally


@functools.lru_cache(maxsize=None)
def attacked(scn=F.RANSOMWARE, perimeter="consumer", seed=7):
    inst, wl, _ = baseline(perimeter, seed)
    s = scenario(scn)
    stream = treatment_run(inst, s, wl, days=1, seed=seed, horizon=86400, attack_start=ATTACK_START)
    return inst, wl, s, stream


def test_pure_baseline_is_empty():
    _, wl, stream = baseline()
    assert len(detect(stream, wl)) == 0
    assert snr(detect(stream, wl), stream) is NO_DEVIATION


@pytest.mark.parametrize("scn", F.SCENARIOS, ids=lambda p: p.stem)
def test_anomalies_are_exactly_attacker_events(scn):
    _, wl, _, stream = attacked(scn)
    found = {a.event.seq for a in detect(stream, wl)}
    truth = {e.seq for e in stream if e.actor.startswith("attacker:")}
    assert found == truth and truth


def test_corrupt_line_reported_not_fatal():
    _, wl, stream = baseline()
    lines = [dumps_event(e) for e in stream.events[:20]]
    lines[5] = lines[5][:-7]
    result = detect(lines, wl)
    assert len(result.errors) == 1 and result.errors[0].index == 5
    assert len(result) == 0


# frozen oracle values: entry point and vehicle each scenario was authored with
VECTORS = {F.RANSOMWARE: (("web01", 443), "crypt0r"), F.LATERAL: (("web01", 443), "pgdumper")}


@pytest.mark.parametrize("scn", F.SCENARIOS, ids=lambda p: p.stem)
def test_vector_matches_injector(scn):
    _, wl, s, stream = attacked(scn)
    trace = reconstruct_trace(detect(stream, wl))
    report = identify_vector(trace, addresses=wl.addresses, fingerprints={s.payload.fingerprint: s.payload.id})
    assert (report.entry, report.vehicle) == VECTORS[scn]
    assert trace.start == ATTACK_START
    assert report.to_dict()["entry"] == {"host": "web01", "port": 443}


def test_empty_trace_raises():
    with pytest.raises(NoTrace):
        identify_vector(AttackTrace())


def test_flags_only_trace():
    _, wl, s, stream = attacked()
    anomalies = [a for a in detect(stream, wl) if isinstance(a.event.record, IntegrityFlag)]
    report = identify_vector(reconstruct_trace(anomalies), addresses=wl.addresses,
                             fingerprints={s.payload.fingerprint: s.payload.id})
    assert report.entry is None and report.vehicle == "crypt0r"
    assert report.to_dict()["entry"] == "Unknown"
    assert identify_vector(reconstruct_trace(anomalies)).vehicle is None


@pytest.mark.parametrize("scn", F.SCENARIOS, ids=lambda p: p.stem)
@pytest.mark.parametrize("perimeter", ["consumer", "advanced"])
def test_snr_against_brute_force_tally(scn, perimeter):
    _, wl, _, stream = attacked(scn, perimeter)
    anomalies = detect(stream, wl)
    report = snr(anomalies, stream)
    p, r, tp, fp, fn = tally([dumps_event(e) for e in stream], [a.event.seq for a in anomalies])
    assert (report.precision, report.recall, report.noise) == (p, r, fp) == (1.0, 1.0, 0)
    assert report.signal == tp and fn == 0


def test_noise_counted():
    _, wl, stream = baseline()
    from camosim.detect import Anomaly
    from camosim.baseline import Deviation, DeviationReason
    fake = [Anomaly(stream[0], Deviation(DeviationReason.UNKNOWN_FLOW))]
    extra = TelemetryEvent(len(stream), "attacker:s", stream[1].record)
    report = snr(fake, stream.events + [extra])
    assert (report.signal, report.noise, report.precision, report.recall) == (0, 1, 0.0, 0.0)


# Hand-derived from the scenario scripts and the two rule sets:
#   ransomware/consumer: 25 probes (1 forwarded to web01:443, 24 fw.deny) + exploit flow, svc.fault,
#     svc.state + 4 fs.modify + 4 flags and 1 snapshot at the next scan + 1 exfil flow = 38
#   ransomware/advanced: 25 probes + exploit flow, all denied by the blocklist = 26
#   lateral/consumer: 15 probes + 3 exploit + 3 lateral (flow, admin session, svc.state)
#     + 2 fs.modify + 2 flags and 1 snapshot + 1 exfil = 27
#   lateral/advanced: 15 probes + exploit flow, all denied = 16
FROZEN_ATTACKER_EVENTS = {
    (F.RANSOMWARE, "consumer"): 38, (F.RANSOMWARE, "advanced"): 26,
    (F.LATERAL, "consumer"): 27, (F.LATERAL, "advanced"): 16,
}


@pytest.mark.parametrize("key", FROZEN_ATTACKER_EVENTS, ids=lambda k: f"{k[0].stem}-{k[1]}")
def test_attacker_event_counts_frozen(key):
    scn, perimeter = key
    _, wl, _, stream = attacked(scn, perimeter)
    report = snr(detect(stream, wl), stream)
    assert report.expected == report.signal == FROZEN_ATTACKER_EVENTS[key]
