"""Unit-suffixed quantities.

Every numeric value in scenario files and certificates carries a unit suffix.
Values are parsed to exact ``Fraction`` instances in SI base units.
"""

from __future__ import annotations

from enum import Enum
from fractions import Fraction

from safecase.core.errors import ScenarioConfigError


class Dimension(str, Enum):
    LENGTH = "length"
    SPEED = "speed"
    ACCELERATION = "acceleration"
    TIME = "time"
    DURATION_H = "hours"


_UNITS: dict[Dimension, dict[str, Fraction]] = {
    Dimension.LENGTH: {"m": Fraction(1), "mm": Fraction(1, 1000), "km": Fraction(1000)},
    Dimension.SPEED: {
        "m/s": Fraction(1),
        "mm/s": Fraction(1, 1000),
        "km/h": Fraction(5, 18),
    },
    Dimension.ACCELERATION: {"m/s^2": Fraction(1), "mm/s^2": Fraction(1, 1000)},
    Dimension.TIME: {"s": Fraction(1), "ms": Fraction(1, 1000)},
    Dimension.DURATION_H: {"h": Fraction(1), "d": Fraction(24)},
}

CANONICAL_UNIT = {
    Dimension.LENGTH: "m",
    Dimension.SPEED: "m/s",
    Dimension.ACCELERATION: "m/s^2",
    Dimension.TIME: "s",
    Dimension.DURATION_H: "h",
}


def parse_number(text: str) -> Fraction:
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise ScenarioConfigError(f"not a number: {text!r}") from exc


def parse_quantity(text: str, dimension: Dimension) -> Fraction:
    """Parse ``"<number> <unit>"`` into SI units of ``dimension``."""
    parts = str(text).split()
    if len(parts) != 2:
        allowed = ", ".join(_UNITS[dimension])
        raise ScenarioConfigError(f"expected '<number> <unit>' ({allowed}), got {text!r}")
    number, unit = parts
    scale = _UNITS[dimension].get(unit)
    if scale is None:
        allowed = ", ".join(_UNITS[dimension])
        raise ScenarioConfigError(f"unit {unit!r} is not a {dimension.value} unit ({allowed})")
    return parse_number(number) * scale


def format_decimal(value: Fraction) -> str:
    """Exact decimal text when the expansion terminates, otherwise ``n/d``."""
    value = Fraction(value)
    den = value.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"{value.numerator}/{value.denominator}"
    digits = max(twos, fives)
    if digits == 0:
        return str(value.numerator)
    scaled = abs(value.numerator) * 10**digits // value.denominator
    sign = "-" if value < 0 else ""
    whole, frac = divmod(scaled, 10**digits)
    return f"{sign}{whole}.{str(frac).rjust(digits, '0').rstrip('0')}"


def format_quantity(value: Fraction, dimension: Dimension) -> str:
    return f"{format_decimal(value)} {CANONICAL_UNIT[dimension]}"


def parse_hours(text: str) -> Fraction:
    """A duration in hours: a bare number, or a number with an ``h`` or ``d`` unit."""
    if len(str(text).split()) == 1:
        return parse_number(str(text))
    return parse_quantity(text, Dimension.DURATION_H)
