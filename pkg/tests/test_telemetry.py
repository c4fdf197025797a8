from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camosim.errors import ParseError, RunClosed
from camosim.telemetry import (
    FlowRecord,
    IntegrityFlag,
    LogRecord,
    SnapshotManifest,
    TelemetryEvent,
    TelemetryStream,
    dumps_event,
    export,
    load,
    load_lenient,
    merge_ordered,
    parse_line,
)

from conftest import baseline

_addr = st.sampled_from(["10.20.1.10", "10.20.2.21", "8.8.4.4"])
_name = st.text(st.characters(min_codepoint=32, max_codepoint=0x2FF), max_size=10)
_records = st.one_of(
    st.builds(lambda s, d, a, b, p, n: FlowRecord(s, s + d, a, b, p, "https", n, "persona:x"),
              st.integers(0, 10**6), st.integers(0, 100), _addr, _addr, st.integers(1, 65535), st.integers(0, 10**9)),
    st.builds(LogRecord, st.integers(0, 10**6), _name, st.sampled_from(["system", "service"]), _name,
              st.dictionaries(_name, st.one_of(st.integers(), _name), max_size=3),
              st.sampled_from(["info", "warning", "error"])),
    st.builds(SnapshotManifest, st.integers(0, 10**6), _name, st.dictionaries(_name, _name, max_size=3)),
    st.builds(IntegrityFlag, st.integers(0, 10**6), _name, _name, st.one_of(st.none(), _name), _name, st.booleans()),
)


def test_emit_positions_and_close():
    s = TelemetryStream()
    assert s.emit(LogRecord(0, "h", "system", "sys.heartbeat"), "system") == 0
    for i in range(1, 5):
        assert s.emit(LogRecord(i, "h", "system", "sys.heartbeat"), "system") == i
    s.close()
    with pytest.raises(RunClosed):
        s.emit(LogRecord(9, "h", "system", "sys.heartbeat"), "system")
    assert [e.seq for e in s] == list(range(5))


def test_empty_stream_roundtrip(tmp_path):
    p = tmp_path / "e.jsonl"
    assert export(TelemetryStream(), p) == 0
    assert len(load(p)) == 0


def test_baseline_roundtrip(tmp_path):
    _, _, stream = baseline()
    p = tmp_path / "events.jsonl"
    assert export(stream, p) == len(stream)
    assert load(p) == stream


@settings(max_examples=150, deadline=None)
@given(records=st.lists(_records, max_size=20))
def test_roundtrip_property(tmp_path_factory, records):
    s = TelemetryStream()
    for r in records:
        s.emit(r, "system")
    p = tmp_path_factory.mktemp("rt") / "e.jsonl"
    export(s, p)
    assert load(p).events == s.events


def test_truncated_file_reports_first_bad_record(tmp_path):
    _, _, stream = baseline()
    p = tmp_path / "events.jsonl"
    export(stream, p)
    data = p.read_bytes()
    cut = data[: len(data) // 2]
    p.write_bytes(cut)
    with pytest.raises(ParseError) as exc:
        load(p)
    assert exc.value.index == cut.count(b"\n")


def test_truncation_at_every_byte_never_crashes(tmp_path):
    _, _, stream = baseline()
    lines = [dumps_event(e) + "\n" for e in stream.events[:4]]
    data = "".join(lines).encode()
    p = tmp_path / "e.jsonl"
    for n in range(len(data) + 1):
        p.write_bytes(data[:n])
        try:
            got = load(p)
        except ParseError as exc:
            assert exc.index == data[:n].count(b"\n")
        else:
            assert n == 0 or data[:n].endswith(b"\n")
            assert len(got) == data[:n].count(b"\n")


@pytest.mark.parametrize("line, needle", [
    ('{"v":1,"seq":0,"actor":"system","type":"log","time":0,"host":"h","source":"system",'
     '"template":"t","args":{},"severity":"info","extra":1}', "unknown fields"),
    ('{"v":2,"seq":0,"actor":"system","type":"snapshot","time":0,"host":"h","files":{}}', "schema version"),
    ('{"v":1,"seq":0,"actor":"system","type":"warp"}', "unknown record type"),
    ('[1,2]', "not an object"),
    ('{"v":1,"seq":0,', "invalid JSON"),
])
def test_bad_records(line, needle):
    with pytest.raises(ParseError) as exc:
        parse_line(line, 7)
    assert needle in str(exc.value) and exc.value.index == 7


def test_load_lenient_collects_errors(tmp_path):
    _, _, stream = baseline()
    lines = [dumps_event(e) for e in stream.events[:3]]
    lines.insert(1, "garbage")
    p = tmp_path / "e.jsonl"
    p.write_text("\n".join(lines) + "\n")
    events, errors = load_lenient(p)
    assert len(events) == 3 and [e.index for e in errors] == [1]


def test_export_is_canonical():
    ev = TelemetryEvent(3, "system", LogRecord(5, "h", "system", "t", {"b": 1, "a": 2}))
    assert dumps_event(ev) == json.dumps(json.loads(dumps_event(ev)), sort_keys=True, separators=(",", ":"))


def test_merge_ordered_total_order():
    a = [TelemetryEvent(0, "system", LogRecord(5, "b", "system", "t")),
         TelemetryEvent(1, "system", LogRecord(9, "a", "system", "t"))]
    b = [TelemetryEvent(0, "system", LogRecord(5, "a", "system", "t"))]
    merged = merge_ordered([a, b])
    assert [(e.time, e.host) for e in merged] == [(5, "a"), (5, "b"), (9, "a")]
    assert merge_ordered([b, a]) == merged
