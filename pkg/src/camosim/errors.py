"""Exception hierarchy shared by every camosim module."""

from __future__ import annotations


class CamoSimError(Exception):
    """Base class for all errors raised by camosim."""


class NotFound(CamoSimError, FileNotFoundError):
    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"no such file: {self.path}")


class ParseError(CamoSimError):
    """A document or record could not be parsed.

    ``line`` is 1-based and set for text documents; ``index`` is the 0-based
    record index for line-delimited telemetry.
    """

    def __init__(self, reason: str, line: int | None = None, index: int | None = None):
        self.reason = reason
        self.line = line
        self.index = index
        where = []
        if line is not None:
            where.append(f"line {line}")
        if index is not None:
            where.append(f"record {index}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + reason)


class ValidationError(CamoSimError):
    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class UnboundSlot(CamoSimError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"slot {name!r} has no value and no default")


class DomainViolation(CamoSimError):
    def __init__(self, name: str, value):
        self.name = name
        self.value = value
        super().__init__(f"value {value!r} outside the domain of slot {name!r}")


class TemplateMismatch(CamoSimError):
    pass


class UnknownHost(CamoSimError):
    pass


class UnknownPath(CamoSimError):
    pass


class MalformedInput(CamoSimError):
    def __init__(self, index: int, reason: str):
        self.index = index
        super().__init__(f"input {index}: {reason}")


class RunClosed(CamoSimError):
    pass


class TelemetryIOError(CamoSimError, OSError):
    pass


class EmptyEnvironment(CamoSimError):
    pass


class NegativeTime(CamoSimError):
    pass


class NoTrace(CamoSimError):
    pass


class SpecError(CamoSimError):
    pass


class ConstructValidityError(SpecError):
    pass


class MissingArtifact(CamoSimError):
    pass
