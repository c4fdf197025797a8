"""Shipped reference content and its integrity manifest.

``data/MANIFEST`` lists ``<sha256>  <relative path>`` for every shipped
fixture. :func:`verify_fixtures` checks each digest and then loads and
validates the file with the loader for its kind.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from camosim._docs import file_sha256
from camosim.errors import CamoSimError

DATA_DIR = Path(__file__).resolve().parent / "data"
MANIFEST_NAME = "MANIFEST"

TRAVELCO = DATA_DIR / "examples" / "travelco.env"
BANNER_MISMATCH = DATA_DIR / "faults" / "travelco_banner_mismatch.env"
RANSOMWARE = DATA_DIR / "scenarios" / "ransomware.scn"
LATERAL = DATA_DIR / "scenarios" / "lateral_admin.scn"
SIGNATURES = DATA_DIR / "signatures.sigdb"
PERIMETER_AB = DATA_DIR / "experiments" / "perimeter_ab.exp"
SCENARIOS = (RANSOMWARE, LATERAL)


@dataclass(frozen=True)
class FixtureSet:
    root: Path
    digests: dict[str, str]  # relative path -> expected sha256

    def path(self, rel: str) -> Path:
        return self.root / rel


@dataclass(frozen=True)
class FixtureResult:
    path: str
    ok: bool
    detail: str


@dataclass(frozen=True)
class FixtureReport:
    results: tuple[FixtureResult, ...]

    @property
    def ok(self) -> bool:
        return bool(self.results) and all(r.ok for r in self.results)

    def failures(self) -> list[FixtureResult]:
        return [r for r in self.results if not r.ok]


def _shipped(root: Path) -> list[str]:
    return sorted(p.relative_to(root).as_posix() for p in root.rglob("*")
                  if p.is_file() and p.name != MANIFEST_NAME and "__pycache__" not in p.parts)


def write_manifest(root: str | os.PathLike = DATA_DIR) -> Path:
    root = Path(root)
    lines = [f"{file_sha256(root / rel)}  {rel}\n" for rel in _shipped(root)]
    out = root / MANIFEST_NAME
    out.write_text("".join(lines), encoding="utf-8")
    return out


def fixture_set(root: str | os.PathLike = DATA_DIR) -> FixtureSet:
    root = Path(root)
    digests = {}
    for line in (root / MANIFEST_NAME).read_text(encoding="utf-8").splitlines():
        if line.strip():
            digest, rel = line.split(None, 1)
            digests[rel.strip()] = digest
    return FixtureSet(root, digests)


def _load(path: Path) -> str:
    # imported lazily: the experiment loader pulls in every module
    from camosim.attack import load_scenario, load_signatures
    from camosim.envmodel import instantiate, load_template
    from camosim.experiment import load_experiment, validate_experiment

    suffix = path.suffix
    if suffix == ".env":
        t = load_template(path)
        slots = {s.name: s.domain[0] for s in t.parameter_slots}
        instantiate(t, slots, 0)
        return f"template {t.id}: {len(t.hosts)} hosts, {len(t.services)} services, {len(t.personas)} personas"
    if suffix == ".scn":
        s = load_scenario(path)
        return f"scenario {s.id}: {len(s.stages)} stages"
    if suffix == ".sigdb":
        db = load_signatures(path)
        return f"signature db: {len(db.entries)} entries"
    if suffix == ".exp":
        spec = load_experiment(path)
        validate_experiment(spec)
        return f"experiment: arms {', '.join(spec.arms)}"
    return "no loader for this kind"


def verify_fixtures(root: str | os.PathLike = DATA_DIR) -> FixtureReport:
    fs = fixture_set(root)
    results = []
    on_disk = set(_shipped(fs.root))
    for rel in sorted(on_disk | set(fs.digests)):
        path = fs.path(rel)
        if rel not in fs.digests:
            results.append(FixtureResult(rel, False, "not listed in MANIFEST"))
            continue
        if rel not in on_disk:
            results.append(FixtureResult(rel, False, "listed in MANIFEST but missing"))
            continue
        actual = file_sha256(path)
        if actual != fs.digests[rel]:
            results.append(FixtureResult(rel, False, f"digest mismatch: expected {fs.digests[rel][:16]}..., "
                                                     f"found {actual[:16]}..."))
            continue
        try:
            results.append(FixtureResult(rel, True, _load(path)))
        except CamoSimError as exc:
            results.append(FixtureResult(rel, False, f"{type(exc).__name__}: {exc}"))
    return FixtureReport(tuple(results))
