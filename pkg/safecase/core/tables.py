from __future__ import annotations

import tomllib
from fractions import Fraction
from pathlib import Path
from typing import Any

from safecase.core.errors import TableError
from safecase.core.units import format_decimal


def parse_tbl(text: str, source: str = "<table>") -> dict[str, Any]:
    """Parse ``.tbl`` text: TOML sections of ``key = value`` rows, floats kept exact."""
    try:
        return tomllib.loads(text, parse_float=Fraction)
    except tomllib.TOMLDecodeError as exc:
        raise TableError(f"{source}: {exc}") from exc


def read_tbl(path: Path) -> dict[str, Any]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise TableError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_tbl(text, str(path))


def section(data: dict[str, Any], name: str, source: str = "<table>") -> dict[str, Any]:
    value = data.get(name)
    if not isinstance(value, dict):
        raise TableError(f"{source}: missing section [{name}]")
    return value


def exact(value: Any, where: str) -> Fraction:
    if isinstance(value, bool):
        raise TableError(f"{where}: expected a number, got {value!r}")
    if isinstance(value, (int, Fraction)):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError):
            pass
    raise TableError(f"{where}: expected a number, got {value!r}")


def render_row(key: str, value: Fraction) -> str:
    text = format_decimal(value)
    if "/" in text:
        text = f'"{text}"'
    return f"{key} = {text}"
