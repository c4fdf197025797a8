from __future__ import annotations

import copy
import functools
import sys

import pytest

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from camosim import fixtureset as F
from camosim.attack import load_scenario
from camosim.baseline import build_baseline
from camosim.envmodel import instantiate, load_template

ATTACK_START = 37800  # 10:30, inside every persona's shift


def raw_doc(path):
    with open(path, "rb") as fh:
        return tomllib.load(fh)


@functools.lru_cache(maxsize=None)
def travelco():
    return load_template(F.TRAVELCO)


@functools.lru_cache(maxsize=None)
def scenario(path=F.RANSOMWARE):
    return load_scenario(path)


@functools.lru_cache(maxsize=None)
def baseline(perimeter="consumer", seed=7, days=1):
    inst = instantiate(travelco(), {"perimeter": perimeter}, seed)
    wl, stream = build_baseline(inst, days, seed)
    return inst, wl, stream


@pytest.fixture
def template():
    return travelco()


@pytest.fixture
def consumer():
    return instantiate(travelco(), {"perimeter": "consumer"}, 42)


@pytest.fixture
def travelco_doc():
    return copy.deepcopy(raw_doc(F.TRAVELCO))


# acceptance verdict lines, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number} {'PASS' if ok else 'FAIL'} {title}: {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
