"""Shared loading helpers for the declarative TOML documents."""

from __future__ import annotations

import hashlib
import os
import re
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from camosim.errors import NotFound, ParseError

_LINE_RE = re.compile(r"at line (\d+)")


def read_toml(path: str | os.PathLike, expected_format: str) -> dict[str, Any]:
    """Read a TOML document and check its ``format`` header."""
    p = Path(path)
    if not p.is_file():
        raise NotFound(p)
    try:
        text = p.read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8: {exc.reason}", line=1) from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            m = _LINE_RE.search(str(exc))
            line = int(m.group(1)) if m else 1
        reason = getattr(exc, "msg", None) or str(exc)
        raise ParseError(reason, line=line) from None
    fmt = doc.get("format")
    if fmt != expected_format:
        raise ParseError(f"expected format header {expected_format!r}, got {fmt!r}", line=1)
    return doc


class Checker:
    """Collects validation violations instead of failing on the first."""

    def __init__(self):
        self.violations: list[str] = []

    def add(self, msg: str) -> None:
        self.violations.append(msg)

    def keys(self, where: str, table: Any, allowed: set[str], required: set[str] = frozenset()) -> bool:
        if not isinstance(table, dict):
            self.add(f"{where}: expected a table")
            return False
        for k in sorted(set(table) - allowed):
            self.add(f"{where}: unknown key {k!r}")
        for k in sorted(required - set(table)):
            self.add(f"{where}: missing key {k!r}")
        return required <= set(table)

    def typed(self, where: str, value: Any, kind, label: str) -> bool:
        kinds = kind if isinstance(kind, tuple) else (kind,)
        # bool is an int subclass; only accept it where asked for
        ok = isinstance(value, kinds) and not (isinstance(value, bool) and bool not in kinds)
        if not ok:
            self.add(f"{where}: expected {label}")
        return ok

    def str_list(self, where: str, value: Any) -> bool:
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            self.add(f"{where}: expected a list of strings")
            return False
        return True


def sha256_hex(*parts: bytes | str | int) -> str:
    """Digest of the given parts, each length-prefixed so concatenation is unambiguous."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, int):
            part = str(part)
        if isinstance(part, str):
            part = part.encode("utf-8")
        h.update(len(part).to_bytes(8, "big"))
        h.update(part)
    return h.hexdigest()


def file_sha256(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def derive_seed(*parts: bytes | str | int) -> int:
    return int(sha256_hex(*parts)[:16], 16)
