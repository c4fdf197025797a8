from __future__ import annotations

import shutil

from camosim import fixtureset as F


def test_clean_checkout_passes():
    report = F.verify_fixtures()
    assert report.ok, report.failures()
    assert {r.path for r in report.results} >= {
        "examples/travelco.env", "scenarios/ransomware.scn", "scenarios/lateral_admin.scn",
        "signatures.sigdb", "experiments/perimeter_ab.exp",
    }


def test_corrupted_byte_reported(tmp_path):
    root = tmp_path / "data"
    shutil.copytree(F.DATA_DIR, root)
    target = root / "scenarios" / "ransomware.scn"
    data = bytearray(target.read_bytes())
    data[-2] ^= 0x01
    target.write_bytes(bytes(data))
    report = F.verify_fixtures(root)
    (bad,) = report.failures()
    assert bad.path == "scenarios/ransomware.scn" and "digest mismatch" in bad.detail


def test_unlisted_and_missing_files(tmp_path):
    root = tmp_path / "data"
    shutil.copytree(F.DATA_DIR, root)
    (root / "extra.env").write_text("x")
    (root / "signatures.sigdb").unlink()
    details = {r.path: r.detail for r in F.verify_fixtures(root).failures()}
    assert "not listed" in details["extra.env"] and "missing" in details["signatures.sigdb"]


def test_loader_errors_carry_path(tmp_path):
    root = tmp_path / "data"
    shutil.copytree(F.DATA_DIR, root)
    (root / "examples" / "travelco.env").write_text('format = "camosim-env/1"\nid = 3\n')
    F.write_manifest(root)
    (bad, *_) = F.verify_fixtures(root).failures()
    assert bad.path == "examples/travelco.env" and "ValidationError" in bad.detail


def test_travelco_personas_diverse():
    t = F.fixture_set()
    assert t.digests
    from camosim.envmodel import load_template
    personas = load_template(F.TRAVELCO).personas
    assert len({p.app_set for p in personas}) >= 2
