from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

from safecase.core.errors import ScenarioConfigError
from safecase.core.units import Dimension, parse_quantity

GRID_DIMENSIONS = {
    "d_max": Dimension.LENGTH,
    "d_step": Dimension.LENGTH,
    "v_max": Dimension.SPEED,
    "v_step": Dimension.SPEED,
}


@dataclass(frozen=True)
class Grid:
    """Quantization of the (distance, speed) plane in mm and mm/s."""

    d_max: int
    d_step: int
    v_max: int
    v_step: int

    def __post_init__(self) -> None:
        if self.d_step <= 0 or self.v_step <= 0:
            raise ScenarioConfigError("grid steps must be positive")
        if self.d_max < 0 or self.v_max < 0:
            raise ScenarioConfigError("grid ranges must not be negative")
        if self.d_max % self.d_step or self.v_max % self.v_step:
            raise ScenarioConfigError("grid steps must divide the grid ranges")

    @property
    def cell_count(self) -> int:
        return self.d_max // self.d_step + 1

    def distance(self, cell: int) -> int:
        return cell * self.d_step

    def cell_of(self, d: int) -> int:
        """Cell whose lower bound is the largest grid distance not above ``d``; -1 if d < 0."""
        if d < 0:
            return -1
        return min(d // self.d_step, self.cell_count - 1)

    def speeds(self, upto: int | None = None) -> range:
        top = self.v_max if upto is None else min(upto, self.v_max)
        return range(0, top + 1, self.v_step)

    def refined(self) -> "Grid":
        """Same ranges at half the steps."""
        if self.d_step % 2 or self.v_step % 2:
            raise ScenarioConfigError("grid steps cannot be halved in whole millimetres")
        return Grid(self.d_max, self.d_step // 2, self.v_max, self.v_step // 2)

    def to_dict(self) -> dict[str, int]:
        return {"d_max": self.d_max, "d_step": self.d_step, "v_max": self.v_max, "v_step": self.v_step}


def _whole_mm(name: str, value: Fraction) -> int:
    scaled = value * 1000
    if scaled.denominator != 1:
        raise ScenarioConfigError(f"grid {name} must be a whole number of millimetres")
    return int(scaled)


def parse_grid_spec(spec: str) -> dict[str, str]:
    """``"d_step=0.5 m,v_step=0.25 m/s"`` to a key/value mapping."""
    values: dict[str, str] = {}
    for item in filter(None, (part.strip() for part in spec.split(","))):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in GRID_DIMENSIONS:
            raise ScenarioConfigError(f"bad grid item {item!r}; keys are {', '.join(GRID_DIMENSIONS)}")
        values[key] = value.strip()
    return values


def resolve_grid(range_mm: int, *layers: Mapping[str, str]) -> Grid:
    """Merge grid settings, later layers winning. ``d_max`` defaults to the detection range."""
    merged: dict[str, str] = {}
    for layer in layers:
        merged.update({k: v for k, v in layer.items() if v})
    missing = [key for key in ("d_step", "v_step", "v_max") if key not in merged]
    if missing:
        raise ScenarioConfigError(f"grid is missing {', '.join(missing)}")
    unknown = sorted(set(merged) - set(GRID_DIMENSIONS))
    if unknown:
        raise ScenarioConfigError(f"unknown grid keys {', '.join(unknown)}")
    values = {key: _whole_mm(key, parse_quantity(text, GRID_DIMENSIONS[key])) for key, text in merged.items()}
    if "d_max" not in values:
        values["d_max"] = range_mm - range_mm % values["d_step"] if values["d_step"] > 0 else 0
    return Grid(**values)
