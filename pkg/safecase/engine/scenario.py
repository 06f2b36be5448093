"""Closed-loop pedestrian scenario: ODD, sensing, decision and control, actuation.

Parameters are kept in SI units as exact fractions. The loop itself runs in
fixed point: positions in integer millimetres, speeds in integer mm/s and
accelerations as exact mm/s^2. Quantities the vehicle needs are rounded up,
quantities it may rely on are rounded down.
"""

from __future__ import annotations

import dataclasses
import math
import tomllib
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Any, Mapping

from safecase.core.errors import ScenarioConfigError, TraceError
from safecase.core.units import Dimension, format_decimal, parse_quantity

MM_PER_M = 1000
CRUISE_GAIN = Fraction(1)

PARAMETER_DIMENSIONS: dict[str, Dimension] = {
    "a_min": Dimension.ACCELERATION,
    "a_max": Dimension.ACCELERATION,
    "delta": Dimension.ACCELERATION,
    "epsilon": Dimension.LENGTH,
    "range": Dimension.LENGTH,
    "vp_max": Dimension.SPEED,
    "T": Dimension.TIME,
    "margin": Dimension.LENGTH,
    "v_target": Dimension.SPEED,
}


class ControllerVariant(str, Enum):
    NOMINAL = "nominal"
    IGNORE_TOLERANCE = "ignore-tolerance"
    NO_REACTION = "no-reaction"
    PASS = "pass"

    @property
    def certifiable(self) -> bool:
        return self is not ControllerVariant.PASS


@dataclass(frozen=True)
class ScenarioParams:
    a_min: Fraction
    a_max: Fraction
    delta: Fraction
    epsilon: Fraction
    range: Fraction
    vp_max: Fraction
    T: Fraction
    margin: Fraction
    v_target: Fraction

    def __post_init__(self) -> None:
        for name in PARAMETER_DIMENSIONS:
            object.__setattr__(self, name, Fraction(getattr(self, name)))
        problems = []
        if not self.a_min < 0 < self.a_max:
            problems.append("a_min < 0 < a_max")
        if self.delta < 0 or self.epsilon < 0 or self.margin < 0 or self.vp_max < 0:
            problems.append("delta, epsilon, margin and vp_max must be non-negative")
        if -self.a_min <= self.delta:
            problems.append("|a_min| must exceed delta")
        if self.T <= 0:
            problems.append("T must be positive")
        elif -self.a_min > self.delta and (-self.a_min - self.delta) * self.T * MM_PER_M < 1:
            problems.append("braking must shed at least 1 mm/s per control period")
        if self.range <= self.margin:
            problems.append("range must exceed margin")
        if self.v_target < 0:
            problems.append("v_target must not be negative")
        if problems:
            raise ScenarioConfigError("invalid scenario parameters: " + "; ".join(problems))

    def replace(self, **changes: Any) -> "ScenarioParams":
        return dataclasses.replace(self, **changes)

    def quantities(self) -> list[tuple[str, Fraction, Dimension]]:
        return [(name, getattr(self, name), dim) for name, dim in PARAMETER_DIMENSIONS.items()]

    # fixed-point views
    @property
    def a_min_mm(self) -> Fraction:
        return self.a_min * MM_PER_M

    @property
    def a_max_mm(self) -> Fraction:
        return self.a_max * MM_PER_M

    @property
    def delta_mm(self) -> Fraction:
        return self.delta * MM_PER_M

    @property
    def b_eff_mm(self) -> Fraction:
        return effective_deceleration(self) * MM_PER_M

    @property
    def epsilon_mm(self) -> Fraction:
        return self.epsilon * MM_PER_M

    @property
    def margin_mm(self) -> Fraction:
        return self.margin * MM_PER_M

    @property
    def range_mm(self) -> int:
        return math.floor(self.range * MM_PER_M)

    @property
    def v_target_mm(self) -> Fraction:
        return self.v_target * MM_PER_M

    @property
    def reaction_accel_mm(self) -> Fraction:
        """Worst acceleration while a cruise command is still in force."""
        return self.a_max_mm + self.delta_mm

    def to_dict(self) -> dict[str, str]:
        return {name: format_decimal(value) for name, value, _ in self.quantities()}


@dataclass(frozen=True)
class VehicleState:
    x: int
    v: int
    xp: int
    in_path: bool = False

    def __post_init__(self) -> None:
        if self.v < 0:
            raise TraceError(f"vehicle speed must be non-negative, got {self.v} mm/s")

    @property
    def gap(self) -> int:
        return self.xp - self.x

    def to_dict(self) -> dict[str, Any]:
        return {"x": self.x, "v": self.v, "xp": self.xp, "in_path": self.in_path}

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> "VehicleState":
        return VehicleState(int(data["x"]), int(data["v"]), int(data["xp"]), bool(data.get("in_path", False)))


@dataclass(frozen=True)
class SensorReading:
    xp_hat: int
    vp_hat: Fraction = Fraction(0)


@dataclass(frozen=True)
class Disturbance:
    """One tick of adversarial input: sensor error in mm, actuator error in mm/s^2."""

    sensor_err: int = 0
    act_err: Fraction = Fraction(0)
    ped_enters: bool = False

    def within_bounds(self, p: ScenarioParams, s: VehicleState) -> bool:
        if self.sensor_err > p.epsilon_mm:
            return False
        if s.xp >= s.x and s.xp + self.sensor_err < s.x:
            return False
        return abs(self.act_err) <= p.delta_mm

    def to_dict(self) -> dict[str, Any]:
        return {
            "sensor_err": self.sensor_err,
            "act_err": format_decimal(Fraction(self.act_err)),
            "ped_enters": self.ped_enters,
        }

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> "Disturbance":
        try:
            return Disturbance(
                sensor_err=int(data["sensor_err"]),
                act_err=Fraction(str(data["act_err"])),
                ped_enters=bool(data.get("ped_enters", False)),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise TraceError(f"malformed disturbance {dict(data)!r}") from exc


def effective_deceleration(p: ScenarioParams) -> Fraction:
    """Guaranteed braking magnitude in m/s^2 when a_min is requested."""
    return -p.a_min - p.delta


def extreme_disturbances(p: ScenarioParams) -> list[tuple[int, Fraction]]:
    """Corner disturbances (sensor_err, act_err) in ascending order."""
    sensor = sorted({0, math.floor(p.epsilon_mm)})
    return [(err, act) for err in sensor for act in (-p.delta_mm, p.delta_mm)]


def _clamp(value: Fraction, low: Fraction, high: Fraction) -> Fraction:
    return max(low, min(high, value))


def _ceil_sqrt(value: Fraction) -> int:
    if value <= 0:
        return 0
    target = math.ceil(value)
    root = math.isqrt(target)
    return root if root * root == target else root + 1


def stopping_distance(v: int, p: ScenarioParams, reaction: Fraction | None = None) -> int:
    """Distance (mm) to standstill.

    One reaction period at the worst actual acceleration ``a_max + delta``,
    then braking at ``b_eff``. ``reaction=0`` gives the closed-form braking
    distance ``v^2 / 2 b_eff``.
    """
    tau = p.T if reaction is None else Fraction(reaction)
    a, b = p.reaction_accel_mm, p.b_eff_mm
    travel = v * tau + a * tau * tau / 2
    v_reacted = max(Fraction(0), v + a * tau)
    return math.ceil(travel + v_reacted * v_reacted / (2 * b))


def _weakest_braking(p: ScenarioParams) -> Disturbance:
    return Disturbance(act_err=p.delta_mm)


def certified_braking_distance(v: int, p: ScenarioParams) -> int:
    """Distance (mm) the plant covers braking from ``v`` to standstill at ``b_eff``.

    Stepped through ``plant_step`` so the rounding of every tick is included.
    """
    state = VehicleState(0, v, 0)
    weakest = _weakest_braking(p)
    while state.v > 0:
        state = plant_step(state, p.a_min_mm, weakest, p)
    return state.x


@lru_cache(maxsize=8)
def braking_distances(p: ScenarioParams, top: int) -> tuple[int, ...]:
    """``certified_braking_distance`` for every speed 0..top, indexed by speed."""
    weakest = _weakest_braking(p)
    table = [0]
    for v in range(1, top + 1):
        nxt = plant_step(VehicleState(0, v, 0), p.a_min_mm, weakest, p)
        table.append(nxt.x + table[nxt.v])
    return tuple(table)


def impact_speed(v: int, d: int, p: ScenarioParams) -> int:
    """Speed (mm/s, rounded up) at which the vehicle reaches an obstacle ``d`` mm ahead."""
    if stopping_distance(v, p) <= d:
        return 0
    tau, a, b = p.T, p.reaction_accel_mm, p.b_eff_mm
    reaction_travel = v * tau + a * tau * tau / 2
    if reaction_travel >= d:
        return _ceil_sqrt(Fraction(v) ** 2 + 2 * a * d)
    v_reacted = v + a * tau
    return _ceil_sqrt(v_reacted * v_reacted - 2 * b * (d - reaction_travel))


def available_distance(r: SensorReading, x: int, p: ScenarioParams) -> int:
    return math.floor(r.xp_hat - p.epsilon_mm - x - p.margin_mm)


def safe_predicate(
    r: SensorReading, v: int, x: int, p: ScenarioParams, reaction: Fraction | None = None
) -> bool:
    return stopping_distance(v, p, reaction) <= available_distance(r, x, p)


def committed(r: SensorReading, v: int, x: int, p: ScenarioParams) -> bool:
    """Full braking can no longer stop short of the estimated position."""
    return stopping_distance(v, p, reaction=Fraction(0)) > r.xp_hat - x


def controller(
    r: SensorReading,
    v: int,
    x: int,
    p: ScenarioParams,
    variant: ControllerVariant = ControllerVariant.NOMINAL,
) -> Fraction:
    """Requested acceleration in mm/s^2."""
    if variant is ControllerVariant.IGNORE_TOLERANCE:
        safe = stopping_distance(v, p) <= r.xp_hat - x
    elif variant is ControllerVariant.NO_REACTION:
        safe = safe_predicate(r, v, x, p, reaction=Fraction(0))
    else:
        safe = safe_predicate(r, v, x, p)
    if not safe:
        if variant is ControllerVariant.PASS and r.xp_hat >= x and committed(r, v, x, p):
            return p.a_max_mm
        return p.a_min_mm
    return _clamp(CRUISE_GAIN * (p.v_target_mm - v), p.a_min_mm, p.a_max_mm)


def cruise_threshold(
    v: int, sensor_err: int, p: ScenarioParams, variant: ControllerVariant = ControllerVariant.NOMINAL
) -> int:
    """Least gap (mm) at which ``controller`` keeps its cruise command at speed ``v``."""
    if variant is ControllerVariant.IGNORE_TOLERANCE:
        return math.ceil(stopping_distance(v, p) - sensor_err)
    reaction = Fraction(0) if variant is ControllerVariant.NO_REACTION else None
    return math.ceil(stopping_distance(v, p, reaction) + p.epsilon_mm + p.margin_mm - sensor_err)


def plant_step(s: VehicleState, areq: Fraction, dist: Disturbance, p: ScenarioParams) -> VehicleState:
    if not p.a_min_mm <= areq <= p.a_max_mm:
        raise TraceError(f"requested acceleration {format_decimal(areq)} mm/s^2 is out of range")
    a = areq + dist.act_err
    v_next = math.ceil(max(Fraction(0), s.v + a * p.T))
    x_next = math.ceil(s.x + (s.v + v_next) * p.T / 2)
    return VehicleState(x_next, v_next, s.xp, s.in_path or dist.ped_enters)


def collision(s: VehicleState) -> bool:
    return s.in_path and s.x >= s.xp and s.v > 0


def sense(s: VehicleState, sensor_err: int) -> SensorReading:
    return SensorReading(xp_hat=s.xp + sensor_err)


def conforms(r: SensorReading, s: VehicleState, p: ScenarioParams) -> bool:
    """Whether a reading honours the sensing contract for state ``s``."""
    if s.xp - s.x <= p.range_mm and r.xp_hat - s.xp > p.epsilon_mm:
        return False
    return not (s.xp >= s.x and r.xp_hat < s.x)


def closed_loop_step(
    s: VehicleState,
    dist: Disturbance,
    p: ScenarioParams,
    variant: ControllerVariant = ControllerVariant.NOMINAL,
) -> VehicleState:
    if not dist.within_bounds(p, s):
        raise TraceError(f"disturbance {dist.to_dict()} exceeds the declared bounds")
    reading = sense(s, dist.sensor_err)
    areq = controller(reading, s.v, s.x, p, variant)
    return plant_step(s, areq, dist, p)


@dataclass(frozen=True)
class ScenarioFile:
    params: ScenarioParams
    grid: dict[str, str]


def parse_scenario(text: str, source: str = "<scenario>") -> ScenarioFile:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioConfigError(f"{source}: {exc}") from exc
    values = data.get("scenario")
    if not isinstance(values, dict):
        raise ScenarioConfigError(f"{source}: missing [scenario] section")
    unknown = sorted(set(values) - set(PARAMETER_DIMENSIONS))
    if unknown:
        raise ScenarioConfigError(f"{source}: unknown scenario keys {', '.join(unknown)}")
    missing = [name for name in PARAMETER_DIMENSIONS if name not in values]
    if missing:
        raise ScenarioConfigError(f"{source}: missing scenario keys {', '.join(missing)}")
    parsed = {}
    for name, dim in PARAMETER_DIMENSIONS.items():
        try:
            parsed[name] = parse_quantity(str(values[name]), dim)
        except ScenarioConfigError as exc:
            raise ScenarioConfigError(f"{source}: {name}: {exc}") from exc
    grid = data.get("grid", {})
    if not isinstance(grid, dict):
        raise ScenarioConfigError(f"{source}: [grid] must be a section")
    return ScenarioFile(ScenarioParams(**parsed), {key: str(value) for key, value in grid.items()})


def load_scenario(path: Path) -> ScenarioFile:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioConfigError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_scenario(text, str(path))
