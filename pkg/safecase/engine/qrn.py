"""Quantitative risk norm calculus over exact rationals."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping

from safecase.core.errors import QrnDomainError, TableError
from safecase.core.tables import exact, parse_tbl, read_tbl, render_row, section
from safecase.core.units import format_decimal

logger = logging.getLogger(__name__)

ROAD_TYPES = ("urban", "highway")

Number = Fraction | int | str


def _q(value: Number) -> Fraction:
    if isinstance(value, Fraction):
        return value
    try:
        return Fraction(value)
    except (ValueError, ZeroDivisionError) as exc:
        raise QrnDomainError(f"not an exact number: {value!r}") from exc


@dataclass(frozen=True)
class Band:
    """Impact-speed band ``[lower, upper)`` in km/h; ``upper=None`` is open."""

    lower: Fraction
    upper: Fraction | None = None

    @staticmethod
    def parse(label: str) -> "Band":
        lo, sep, hi = label.partition("-")
        if not sep:
            raise TableError(f"band {label!r} must look like 'lo-hi' or 'lo-'")
        try:
            lower = Fraction(lo)
            upper = Fraction(hi) if hi else None
        except ValueError as exc:
            raise TableError(f"band {label!r}: {exc}") from exc
        if lower < 0 or (upper is not None and upper <= lower):
            raise TableError(f"band {label!r} is empty or negative")
        return Band(lower, upper)

    @property
    def sort_key(self) -> tuple[Fraction, bool, Fraction]:
        return (self.lower, self.upper is None, self.upper or Fraction(0))

    @property
    def label(self) -> str:
        upper = "" if self.upper is None else format_decimal(self.upper)
        return f"{format_decimal(self.lower)}-{upper}"

    def contains(self, speed_kmh: Fraction) -> bool:
        return self.lower <= speed_kmh and (self.upper is None or speed_kmh < self.upper)


@dataclass(frozen=True)
class RiskNormTable:
    bands: tuple[tuple[Band, Fraction], ...]

    def __post_init__(self) -> None:
        previous: Band | None = None
        for band, norm in self.bands:
            if norm <= 0:
                raise TableError(f"risk norm for band {band.label} must be positive")
            if previous is not None and previous.upper != band.lower:
                raise TableError(f"bands {previous.label} and {band.label} are not contiguous")
            previous = band

    def covers_all_speeds(self) -> bool:
        return bool(self.bands) and self.bands[0][0].lower == 0 and self.bands[-1][0].upper is None

    def norm(self, band: Band) -> Fraction:
        for candidate, norm in self.bands:
            if candidate == band:
                return norm
        raise QrnDomainError(f"band {band.label} is not in the risk norm table")

    def band_for(self, speed_kmh: Fraction) -> Band | None:
        for band, _ in self.bands:
            if band.contains(speed_kmh):
                return band
        return None


@dataclass(frozen=True)
class ExposureTable:
    rows: Mapping[tuple[str, int], Fraction]

    def __post_init__(self) -> None:
        for key, exposure in self.rows.items():
            if exposure <= 0:
                raise TableError(f"exposure for {key[0]}:{key[1]} must be positive")

    def exposure(self, road: str, speed_kmh: int) -> Fraction:
        try:
            return self.rows[(road, speed_kmh)]
        except KeyError as exc:
            raise QrnDomainError(f"no exposure row for {road}:{speed_kmh}") from exc


@dataclass(frozen=True)
class Allocation:
    budget: Fraction
    parts: Mapping[str, Fraction] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, value in [("budget", self.budget), *self.parts.items()]:
            if not 0 <= value <= 1:
                raise QrnDomainError(f"{name} probability {format_decimal(value)} is outside [0, 1]")

    @property
    def total(self) -> Fraction:
        return sum(self.parts.values(), Fraction(0))


@dataclass(frozen=True)
class AllocationVerdict:
    passed: bool
    total: Fraction
    budget: Fraction
    excess: Fraction
    fulfilment: Fraction

    def to_dict(self) -> dict[str, Any]:
        return {
            "ok": self.passed,
            "verdict": "Pass" if self.passed else "Fail",
            "total": format_decimal(self.total),
            "budget": format_decimal(self.budget),
            "excess": format_decimal(self.excess),
            "fulfilment": format_decimal(self.fulfilment),
        }


@dataclass(frozen=True)
class CapabilityTable:
    """Per initial speed (km/h): probability of an impact in each band per incident."""

    entries: Mapping[Fraction, Mapping[Band, Fraction]]

    def __post_init__(self) -> None:
        for speed, row in self.entries.items():
            for band, probability in row.items():
                if not 0 <= probability <= 1:
                    raise TableError(f"capability {speed} km/h band {band.label} is outside [0, 1]")
            if sum(row.values(), Fraction(0)) > 1:
                raise TableError(f"capability {speed} km/h sums to more than 1")

    @property
    def speeds(self) -> list[Fraction]:
        return sorted(self.entries)


@dataclass(frozen=True)
class SpeedVerdict:
    speed: Fraction
    admissible: bool
    mean_times: tuple[tuple[Band, Fraction | float], ...]
    failing: tuple[Band, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "speed": format_decimal(self.speed),
            "admissible": self.admissible,
            "mean_times": {
                band.label: "inf" if value == math.inf else format_decimal(value)
                for band, value in self.mean_times
            },
            "failing": [band.label for band in self.failing],
        }


@dataclass(frozen=True)
class Admissibility:
    verdicts: tuple[SpeedVerdict, ...]
    max_admissible: Fraction | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "ok": self.max_admissible is not None,
            "max_admissible": None if self.max_admissible is None else format_decimal(self.max_admissible),
            "verdicts": [v.to_dict() for v in self.verdicts],
        }


def impact_budget(exposure_h: Number, risk_norm_h: Number) -> Fraction:
    """Largest admissible impact probability per incident."""
    exposure, norm = _q(exposure_h), _q(risk_norm_h)
    if exposure <= 0 or norm <= 0:
        raise QrnDomainError("exposure and risk norm must be positive")
    return min(Fraction(1), exposure / norm)


def mean_time_between(exposure_h: Number, p: Number) -> Fraction | float:
    exposure, probability = _q(exposure_h), _q(p)
    if exposure <= 0:
        raise QrnDomainError("exposure must be positive")
    if not 0 <= probability <= 1:
        raise QrnDomainError(f"probability {format_decimal(probability)} is outside [0, 1]")
    if probability == 0:
        return math.inf
    return exposure / probability


def fulfilment_probability(allocation: Allocation) -> Fraction:
    """Lower bound on the chance that no component breaks its model (union bound)."""
    return max(Fraction(0), 1 - allocation.total)


def check_allocation(allocation: Allocation) -> AllocationVerdict:
    total = allocation.total
    passed = total <= allocation.budget
    return AllocationVerdict(
        passed=passed,
        total=total,
        budget=allocation.budget,
        excess=Fraction(0) if passed else total - allocation.budget,
        fulfilment=fulfilment_probability(allocation),
    )


def band_budgets(exposure_h: Number, norms: RiskNormTable) -> list[tuple[Band, Fraction]]:
    return [(band, impact_budget(exposure_h, norm)) for band, norm in norms.bands]


def admissible_speeds(
    cap: CapabilityTable,
    exposure_h: Number,
    norms: RiskNormTable,
    speeds: Iterable[Number] | None = None,
) -> Admissibility:
    candidates = sorted(_q(s) for s in speeds) if speeds is not None else cap.speeds
    verdicts: list[SpeedVerdict] = []
    for speed in candidates:
        row = cap.entries.get(speed)
        if row is None:
            raise QrnDomainError(f"capability table does not cover {format_decimal(speed)} km/h")
        mean_times = []
        failing = []
        for band, probability in sorted(row.items(), key=lambda item: item[0].sort_key):
            mean_time = mean_time_between(exposure_h, probability)
            mean_times.append((band, mean_time))
            if mean_time < norms.norm(band):
                failing.append(band)
        verdicts.append(SpeedVerdict(speed, not failing, tuple(mean_times), tuple(failing)))
        logger.debug("speed %s km/h admissible=%s", format_decimal(speed), not failing)
    admissible = [v.speed for v in verdicts if v.admissible]
    return Admissibility(tuple(verdicts), max(admissible) if admissible else None)


def _risk_norms_from(data: dict[str, Any], source: str) -> RiskNormTable:
    rows = section(data, "risk_norms", source)
    bands = [(Band.parse(label), exact(value, f"{source}: {label}")) for label, value in rows.items()]
    return RiskNormTable(tuple(sorted(bands, key=lambda item: item[0].sort_key)))


def parse_risk_norms(text: str, source: str = "<risk norms>") -> RiskNormTable:
    return _risk_norms_from(parse_tbl(text, source), source)


def load_risk_norms(path: Path) -> RiskNormTable:
    return _risk_norms_from(read_tbl(path), str(path))


def _exposure_from(data: dict[str, Any], source: str) -> ExposureTable:
    rows: dict[tuple[str, int], Fraction] = {}
    for road, table in data.items():
        if road not in ROAD_TYPES or not isinstance(table, dict):
            raise TableError(f"{source}: unknown road type section [{road}]")
        for speed, value in table.items():
            if not speed.isdigit():
                raise TableError(f"{source}: road speed {speed!r} must be an integer km/h")
            rows[(road, int(speed))] = exact(value, f"{source}: {road}.{speed}")
    return ExposureTable(rows)


def parse_exposure(text: str, source: str = "<exposure>") -> ExposureTable:
    return _exposure_from(parse_tbl(text, source), source)


def load_exposure(path: Path) -> ExposureTable:
    return _exposure_from(read_tbl(path), str(path))


def _capability_from(data: dict[str, Any], source: str) -> CapabilityTable:
    entries: dict[Fraction, dict[Band, Fraction]] = {}
    for speed, table in data.items():
        if not isinstance(table, dict):
            raise TableError(f"{source}: expected a [<speed>] section, got key {speed!r}")
        row = {
            Band.parse(label): exact(value, f"{source}: {speed}.{label}") for label, value in table.items()
        }
        entries[exact(speed, f"{source}: section [{speed}]")] = row
    return CapabilityTable(entries)


def parse_capability_table(text: str, source: str = "<capability>") -> CapabilityTable:
    return _capability_from(parse_tbl(text, source), source)


def load_capability_table(path: Path) -> CapabilityTable:
    return _capability_from(read_tbl(path), str(path))


def render_capability_table(cap: CapabilityTable) -> str:
    blocks = []
    for speed in cap.speeds:
        row = sorted(cap.entries[speed].items(), key=lambda item: item[0].sort_key)
        lines = [f'["{format_decimal(speed)}"]']
        lines += [render_row(f'"{band.label}"', probability) for band, probability in row]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"
