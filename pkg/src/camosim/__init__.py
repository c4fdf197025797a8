"""Deterministic desk-scale simulation of camouflaged honeynet experiments."""

from __future__ import annotations

__version__ = "0.1.0"

from camosim.envmodel import EnvironmentInstance, EnvironmentTemplate, instantiate, load_template  # noqa: E402
from camosim.errors import CamoSimError  # noqa: E402
from camosim.telemetry import TelemetryStream  # noqa: E402

__all__ = [
    "CamoSimError",
    "EnvironmentInstance",
    "EnvironmentTemplate",
    "TelemetryStream",
    "__version__",
    "instantiate",
    "load_template",
]
