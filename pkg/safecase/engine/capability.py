"""Impact-speed band probabilities per initial speed from a declared incident model."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping

from safecase.core.errors import QrnDomainError, TableError
from safecase.core.tables import exact, parse_tbl, read_tbl, section
from safecase.engine.qrn import Band, CapabilityTable, Number, RiskNormTable
from safecase.engine.scenario import MM_PER_M, ScenarioParams, impact_speed

logger = logging.getLogger(__name__)

# 1 km/h = 2500/9 mm/s
KMH_TO_MM_S = Fraction(2500, 9)


class EntryTiming(str, Enum):
    ADVERSARIAL = "adversarial"
    OFFSET = "offset"


@dataclass(frozen=True)
class IncidentModel:
    """Weighted detection distances (mm) and, for offset timing, weighted lateral offsets (mm)."""

    entries: tuple[tuple[int, Fraction], ...]
    timing: EntryTiming = EntryTiming.ADVERSARIAL
    offsets: tuple[tuple[int, Fraction], ...] = ()

    def __post_init__(self) -> None:
        _check_weights("distance", self.entries)
        if self.timing is EntryTiming.OFFSET:
            _check_weights("offset", self.offsets)
        elif self.offsets:
            raise TableError("lateral offsets only apply to offset entry timing")

    def incidents(self) -> list[tuple[int, int | None, Fraction]]:
        """(distance, offset or None, weight) for every incident in the model."""
        if self.timing is EntryTiming.ADVERSARIAL:
            return [(d, None, w) for d, w in self.entries]
        return [(d, o, w * ow) for d, w in self.entries for o, ow in self.offsets]

    def to_dict(self) -> dict[str, Any]:
        return {
            "timing": self.timing.value,
            "entries": [{"distance_mm": d, "weight": str(w)} for d, w in self.entries],
            "offsets": [{"offset_mm": o, "weight": str(w)} for o, w in self.offsets],
        }


def _check_weights(what: str, rows: tuple[tuple[int, Fraction], ...]) -> None:
    if not rows:
        raise TableError(f"incident model has no {what} rows")
    for value, weight in rows:
        if value < 0:
            raise TableError(f"{what} {value} mm is negative")
        if weight < 0:
            raise TableError(f"{what} {value} mm has a negative weight")
    total = sum((w for _, w in rows), Fraction(0))
    if total != 1:
        raise TableError(f"{what} weights sum to {total}, expected exactly 1")


def _metres_to_mm(key: str, source: str) -> int:
    scaled = exact(key, f"{source}: {key}") * MM_PER_M
    if scaled.denominator != 1:
        raise TableError(f"{source}: {key} m is not a whole number of millimetres")
    return int(scaled)


def _weighted_rows(table: Mapping[str, Any], source: str) -> tuple[tuple[int, Fraction], ...]:
    rows = [(_metres_to_mm(key, source), exact(value, f"{source}: {key}")) for key, value in table.items()]
    return tuple(sorted(rows))


def _incident_model_from(data: dict[str, Any], source: str) -> IncidentModel:
    model = data.get("model", {})
    try:
        timing = EntryTiming(str(model.get("entry", EntryTiming.ADVERSARIAL.value)))
    except ValueError as exc:
        raise TableError(f"{source}: entry must be 'adversarial' or 'offset'") from exc
    entries = _weighted_rows(section(data, "distances", source), source)
    offsets = _weighted_rows(data["offsets"], source) if "offsets" in data else ()
    return IncidentModel(entries, timing, offsets)


def parse_incident_model(text: str, source: str = "<incidents>") -> IncidentModel:
    return _incident_model_from(parse_tbl(text, source), source)


def load_incident_model(path: Path) -> IncidentModel:
    return _incident_model_from(read_tbl(path), str(path))


def uniform_incident_model(d_min: int, d_max: int, points: int) -> IncidentModel:
    """Equal weights on ``points`` distances spread evenly over [d_min, d_max] (mm, floored)."""
    if points < 1 or d_max < d_min:
        raise TableError("uniform model needs at least one point over a non-empty range")
    weight = Fraction(1, points)
    if points == 1:
        return IncidentModel(((d_min, weight),))
    span = d_max - d_min
    return IncidentModel(tuple((d_min + span * i // (points - 1), weight) for i in range(points)))


def _passed_before_entry(v: int, d: int, offset: int, p: ScenarioParams) -> bool:
    """The vehicle, rolling at ``v``, crosses the entry point before the pedestrian gets there."""
    if v <= 0:
        return False
    reach_time = Fraction(offset) / (p.vp_max * MM_PER_M)
    return Fraction(d, v) < reach_time


def _incident_impact(v: int, d: int, offset: int | None, p: ScenarioParams) -> int:
    if offset is not None and _passed_before_entry(v, d, offset, p):
        return 0
    return impact_speed(v, d, p)


def impact_distribution(
    p: ScenarioParams,
    v0_kmh: Number,
    model: IncidentModel,
    bands: RiskNormTable,
    jobs: int = 1,
) -> dict[Band, Fraction]:
    v0 = Fraction(v0_kmh)
    if v0 < 0:
        raise QrnDomainError("initial speed must not be negative")
    if not bands.covers_all_speeds():
        raise QrnDomainError("impact bands must cover every speed from 0 km/h upwards")
    v_mm = math.ceil(v0 * KMH_TO_MM_S)
    incidents = model.incidents()

    def run(incident: tuple[int, int | None, Fraction]) -> int:
        d, offset, _ = incident
        return _incident_impact(v_mm, d, offset, p)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            speeds = list(executor.map(run, incidents))
    else:
        speeds = [run(incident) for incident in incidents]

    result = {band: Fraction(0) for band, _ in bands.bands}
    for (_, _, weight), speed in zip(incidents, speeds):
        if speed == 0:
            continue
        band = bands.band_for(speed / KMH_TO_MM_S)
        assert band is not None
        result[band] += weight
    logger.debug(
        "v0=%s km/h: impact mass %s over %d incidents", v0, sum(result.values(), Fraction(0)), len(incidents)
    )
    return result


def capability_table(
    p: ScenarioParams,
    speeds: Iterable[Number],
    model: IncidentModel,
    bands: RiskNormTable,
    jobs: int = 1,
) -> CapabilityTable:
    entries = {Fraction(v): impact_distribution(p, v, model, bands, jobs) for v in speeds}
    return CapabilityTable(entries)

