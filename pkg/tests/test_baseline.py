from __future__ import annotations

import pytest

from camosim.baseline import (
    PASS,
    DeviationReason,
    IntegrityMonitor,
    check,
    dumps_whitelist,
    integrity_scan,
    loads_whitelist,
    provisional_whitelist,
    whitelist_from_stream,
)
from camosim.detect import detect
from camosim.envmodel import instantiate
from camosim.errors import EmptyEnvironment, ParseError
from camosim.persona import AnticipatedChange
from camosim.sim import Actor, FileWrite, SimInput, WorldState, run
from camosim.telemetry import FlowRecord, LogRecord, SnapshotManifest

from conftest import baseline, travelco


def test_contains_workstation_to_storefront_pattern():
    _, wl, stream = baseline()
    # enumerate the flow patterns of the baseline run directly
    seen = {(wl.classify(r.src), wl.classify(r.dst), r.port) for r in stream.records(FlowRecord)}
    assert ("ws01", "web01", 443) in seen
    assert ("ws01", "web01", 443, "https") in wl.flows


def test_baseline_replays_clean():
    _, wl, stream = baseline()
    assert all(check(e, wl) is PASS for e in stream)
    assert len(detect(stream, wl)) == 0


def test_same_inputs_same_whitelist_text():
    inst = instantiate(travelco(), {"perimeter": "advanced"}, 21)
    from camosim.baseline import build_baseline
    assert dumps_whitelist(build_baseline(inst, 1, 21)[0]) == dumps_whitelist(build_baseline(inst, 1, 21)[0])


def test_check_verdicts():
    _, wl, _ = baseline()
    assert check(FlowRecord(40000, 40001, "10.20.2.21", "93.184.216.34", 8443, "https", 1, "x"), wl).reason \
        is DeviationReason.UNKNOWN_FLOW
    assert check(LogRecord(40000, "web01", "service", "svc.fault"), wl).reason is DeviationReason.UNKNOWN_LOG_TEMPLATE
    assert check(LogRecord(40000, "ws01", "system", "sys.heartbeat"), wl) is PASS


def test_rate_bound():
    _, wl, stream = baseline()
    flow = stream.records(FlowRecord)[0]
    pat = wl.pattern(flow)
    bound = wl.rate_bound(pat)
    assert check(flow, wl, bound) is PASS
    assert check(flow, wl, bound + 1).reason is DeviationReason.RATE_EXCEEDED


def test_scan_no_change_and_anticipated_edit():
    inst = instantiate(travelco(), {"perimeter": "consumer"}, 5)
    digest = "aa" * 32
    wl = provisional_whitelist(inst, [AnticipatedChange("ws01", "/docs/bookings.xlsx", digest, 100, "d.okafor")])
    world = WorldState.initial(inst)
    world.clock = 300
    assert integrity_scan(world, 300, wl, 300, wl.snapshots) == ([], {})
    world.files["ws01"]["/docs/bookings.xlsx"] = digest
    flags, changed = integrity_scan(world, 300, wl, 300, wl.snapshots)
    assert flags == [] and set(changed) == {"ws01"}


def test_injected_write_flagged_once():
    inst = instantiate(travelco(), {"perimeter": "consumer"}, 5)
    wl = provisional_whitelist(inst, [])
    inputs = [SimInput(120, Actor.attacker("s"), FileWrite("web01", "/tmp/ransom_note.txt", "bb" * 32))]
    stream, _ = run(inst, inputs, 1200, monitor=IntegrityMonitor(wl, 300))
    flags = [e for e in stream if type(e.record).__name__ == "IntegrityFlag"]
    assert len(flags) == 1
    f = flags[0]
    assert (f.record.path, f.record.anticipated, f.record.time, f.actor) == \
        ("/tmp/ransom_note.txt", False, 300, "attacker:s")


def test_stale_ledger_entry_does_not_cover_late_change():
    inst = instantiate(travelco(), {"perimeter": "consumer"}, 5)
    digest = "cc" * 32
    wl = provisional_whitelist(inst, [AnticipatedChange("ws01", "/docs/bookings.xlsx", digest, 10, "d.okafor")])
    world = WorldState.initial(inst)
    world.files["ws01"]["/docs/bookings.xlsx"] = digest
    world.clock = 900
    flags, _ = integrity_scan(world, 900, wl, 300, wl.snapshots)
    assert len(flags) == 1


def test_snapshot_check_uses_initial_state_and_ledger():
    _, wl, _ = baseline()
    files = dict(wl.snapshots["web01"])
    assert check(SnapshotManifest(500, "web01", files), wl) is PASS
    files["/tmp/x"] = "dd" * 32
    assert check(SnapshotManifest(500, "web01", files), wl).reason is DeviationReason.UNANTICIPATED_FILE_CHANGE


def test_attacker_events_never_enter_whitelist():
    _, wl0, stream = baseline()
    ext = stream.events + []
    from camosim.telemetry import TelemetryEvent
    ext.append(TelemetryEvent(len(ext), "attacker:s", LogRecord(1, "web01", "service", "svc.fault")))
    wl = whitelist_from_stream(ext, wl0)
    assert ("web01", "service", "svc.fault") not in wl.logs


def test_whitelist_text_roundtrip_and_errors():
    _, wl, _ = baseline()
    text = dumps_whitelist(wl)
    assert dumps_whitelist(loads_whitelist(text)) == text
    assert loads_whitelist(text) == wl
    with pytest.raises(ParseError) as exc:
        loads_whitelist(text.replace("\nflow\t", "\nflow\tbroken\t", 1))
    assert exc.value.line is not None and exc.value.line > 1
    with pytest.raises(ParseError):
        loads_whitelist(text[:-1])
    with pytest.raises(ParseError):
        loads_whitelist("nonsense\n")


def test_empty_environment(travelco_doc):
    from camosim.baseline import build_baseline
    from camosim.envmodel import template_from_dict
    travelco_doc["personas"] = []
    travelco_doc["services"] = []
    inst = instantiate(template_from_dict(travelco_doc), {"perimeter": "consumer"}, 1)
    with pytest.raises(EmptyEnvironment):
        build_baseline(inst, 1, 1)
