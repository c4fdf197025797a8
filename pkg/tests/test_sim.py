from __future__ import annotations

import pytest

from camosim.envmodel import instantiate
from camosim.errors import MalformedInput
from camosim.sim import SYSTEM, Actor, FileWrite, Flow, LogEmit, ServiceTransition, SimInput, WorldState, run, snapshot
from camosim.telemetry import FlowRecord, LogRecord, dumps_event

from conftest import travelco

PERSONA = Actor.persona("d.okafor")


def _inst(perimeter="consumer"):
    return instantiate(travelco(), {"perimeter": perimeter}, 3)


def test_empty_inputs_only_heartbeats():
    stream, _ = run(_inst(), [], 3600)
    recs = [e.record for e in stream]
    assert recs and all(isinstance(r, LogRecord) and r.template == "sys.heartbeat" for r in recs)
    # 4 ticks (0, 900, 1800, 2700) x 5 hosts
    assert len(recs) == 20
    assert {e.actor for e in stream} == {"system"}


def test_horizon_zero():
    inst = _inst()
    stream, world = run(inst, [], 0)
    assert len(stream) == 0
    assert world == WorldState.initial(inst)


def test_run_twice_byte_identical():
    inst = _inst()
    inputs = [
        SimInput(100, PERSONA, Flow("10.20.2.21", "10.20.1.10", 443, 900, 2, "https")),
        SimInput(100, SYSTEM, LogEmit("web01", "service", "http.access", {"port": 443})),
        SimInput(50, PERSONA, FileWrite("ws01", "/docs/bookings.xlsx", "ab" * 32)),
    ]
    a, _ = run(inst, inputs, 7200)
    b, _ = run(inst, list(inputs), 7200)
    assert [dumps_event(e) for e in a] == [dumps_event(e) for e in b]


def test_total_order_system_before_persona_before_attacker():
    inst = _inst()
    log = lambda: LogEmit("web01", "service", "http.access", {"port": 443})  # noqa: E731
    inputs = [SimInput(10, Actor.attacker("x"), log()), SimInput(10, PERSONA, log()), SimInput(10, SYSTEM, log())]
    stream, _ = run(inst, inputs, 20, heartbeat_interval=0)
    assert [e.actor for e in stream] == ["system", "persona:d.okafor", "attacker:x"]
    assert [e.seq for e in stream] == [0, 1, 2]


def test_denied_flow_becomes_perimeter_log():
    inst = _inst("consumer")
    stream, world = run(inst, [SimInput(5, Actor.attacker("s"), Flow("198.51.100.23", "10.20.2.5", 5432, 60, 0, "tcp-syn"))],
                        10, heartbeat_interval=0)
    (ev,) = stream
    assert ev.record.host == "perimeter" and ev.record.template == "fw.deny"
    assert ev.record.args["rule"] == "default-deny"
    assert world.connections == []


def test_allowed_flow_recorded_with_duration():
    inst = _inst()
    stream, world = run(inst, [SimInput(5, PERSONA, Flow("10.20.2.21", "10.20.1.10", 443, 900, 4, "https"))],
                        7, heartbeat_interval=0)
    rec = stream[0].record
    assert isinstance(rec, FlowRecord) and (rec.start, rec.end) == (5, 9)
    assert world.connections == [rec]


def test_service_transition_and_file_write_effects():
    inst = _inst()
    inputs = [SimInput(1, PERSONA, FileWrite("ws01", "/docs/bookings.xlsx", "cd" * 32)),
              SimInput(2, Actor.attacker("s"), ServiceTransition("web01", 443, "compromised"))]
    stream, world = run(inst, inputs, 10, heartbeat_interval=0)
    assert world.files["ws01"]["/docs/bookings.xlsx"] == "cd" * 32
    assert world.writers[("ws01", "/docs/bookings.xlsx")] == "persona:d.okafor"
    assert world.services[("web01", 443)] == "compromised"
    assert [e.record.template for e in stream] == ["fs.modify", "svc.state"]


def test_inputs_beyond_horizon_are_skipped():
    stream, _ = run(_inst(), [SimInput(500, PERSONA, LogEmit("ws01", "application", "app.launch"))], 100,
                    heartbeat_interval=0)
    assert len(stream) == 0


@pytest.mark.parametrize("bad", [
    SimInput(-1, PERSONA, LogEmit("ws01", "application", "app.launch")),
    SimInput(1, PERSONA, LogEmit("ws01", "service", "http.access")),
    SimInput(1, PERSONA, LogEmit("nohost", "application", "app.launch")),
    SimInput(1, PERSONA, Flow("8.8.8.8", "1.1.1.1", 443, 1, 1, "https")),
    SimInput(1, PERSONA, Flow("10.20.2.21", "10.20.1.10", 0, 1, 1, "https")),
    SimInput(1, PERSONA, ServiceTransition("ws01", 22, "down")),
    "not an input",
])
def test_malformed_inputs(bad):
    with pytest.raises(MalformedInput) as exc:
        run(_inst(), [bad], 10)
    assert exc.value.index == 0


def test_snapshot_counts_and_identity():
    inst = _inst()
    world = WorldState.initial(inst)
    snaps = snapshot(world, 0)
    assert sum(len(m.files) for m in snaps.values()) == sum(len(h.critical_files) for h in inst.hosts)
    assert snapshot(world, 0) == snaps
    with pytest.raises(ValueError):
        snapshot(world, 1)


def test_one_edit_changes_one_digest():
    inst = _inst()
    before = snapshot(WorldState.initial(inst), 0)
    _, world = run(inst, [SimInput(1, PERSONA, FileWrite("ws01", "/docs/bookings.xlsx", "ee" * 32))], 5)
    after = snapshot(world, 5)
    diffs = [(h, p) for h in after for p, d in after[h].files.items() if before[h].files.get(p) != d]
    assert diffs == [("ws01", "/docs/bookings.xlsx")]
