"""Proof certificates: text encoding and an independent checker.

A certificate states, per distance cell, the largest grid speed whose full
stopping distance fits the cell after sensor tolerance and margin. The checker
re-derives every claim, and the closure of the braking region that contains
them, from the scenario primitives alone.
"""

from __future__ import annotations

import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable

from safecase.core.errors import CertificateDecodeError, SafecaseError
from safecase.core.units import format_quantity, parse_quantity
from safecase.engine.grid import GRID_DIMENSIONS, Grid
from safecase.engine.scenario import (
    PARAMETER_DIMENSIONS,
    ControllerVariant,
    Disturbance,
    ScenarioParams,
    VehicleState,
    braking_distances,
    controller,
    cruise_threshold,
    extreme_disturbances,
    plant_step,
    sense,
    stopping_distance,
)
from safecase.utils.hash import DIGEST_ALGORITHM, blake3_lines

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = "safecase-certificate"
CELL_WIDTH = 8
_GRID_UNITS = {"d_max": "mm", "d_step": "mm", "v_max": "mm/s", "v_step": "mm/s"}
_HEX_DIGEST = re.compile(r"[0-9a-f]{64}")
_DIGITS = re.compile(r"[0-9]+")


@dataclass(frozen=True)
class Certificate:
    params: ScenarioParams
    grid: Grid
    speeds: tuple[int, ...]
    digest: str
    producer: str = "safecase"
    controller: ControllerVariant = ControllerVariant.NOMINAL
    version: int = FORMAT_VERSION
    declared_cells: int | None = None

    @staticmethod
    def create(
        params: ScenarioParams,
        grid: Grid,
        speeds: tuple[int, ...] | list[int],
        producer: str,
        controller: ControllerVariant = ControllerVariant.NOMINAL,
    ) -> "Certificate":
        if not controller.certifiable:
            raise SafecaseError(f"the {controller.value} controller is excluded from certificates")
        return Certificate(
            params=params,
            grid=grid,
            speeds=tuple(speeds),
            digest=params_digest(params, grid, controller),
            producer=producer,
            controller=controller,
        )

    @property
    def cell_count(self) -> int:
        return len(self.speeds) if self.declared_cells is None else self.declared_cells

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "producer": self.producer,
            "controller": self.controller.value,
            "params": self.params.to_dict(),
            "grid": self.grid.to_dict(),
            "digest": self.digest,
            "cells": len(self.speeds),
        }


@dataclass(frozen=True)
class CertificateVerdict:
    valid: bool
    reason: str | None = None
    cell: int | None = None
    detail: str = ""

    def __str__(self) -> str:
        if self.valid:
            return "Valid"
        where = f" at cell {self.cell}" if self.cell is not None else ""
        return f"Invalid({self.reason}{where}): {self.detail}"

    def to_dict(self) -> dict[str, Any]:
        return {"ok": self.valid, "reason": self.reason, "cell": self.cell, "detail": self.detail}


def canonical_lines(params: ScenarioParams, grid: Grid, controller: ControllerVariant) -> list[str]:
    lines = [f"controller: {controller.value}"]
    lines += [f"param {name}: {format_quantity(value, dim)}" for name, value, dim in params.quantities()]
    lines += [f"grid {name}: {getattr(grid, name)} {_GRID_UNITS[name]}" for name in GRID_DIMENSIONS]
    return lines


def params_digest(params: ScenarioParams, grid: Grid, controller: ControllerVariant) -> str:
    return blake3_lines(canonical_lines(params, grid, controller))


def encode(c: Certificate) -> bytes:
    if "\n" in c.producer or "\r" in c.producer:
        raise SafecaseError("producer id must be a single line")
    lines = [
        f"{MAGIC} {c.version}",
        f"producer: {c.producer}",
        f"digest-algorithm: {DIGEST_ALGORITHM}",
        *canonical_lines(c.params, c.grid, c.controller),
        f"digest: {c.digest}",
        f"cells: {len(c.speeds)}",
    ]
    for speed in c.speeds:
        if not 0 <= speed < 10**CELL_WIDTH:
            raise SafecaseError(f"cell speed {speed} does not fit the certificate format")
        lines.append(f"{speed:0{CELL_WIDTH}d}")
    return ("\n".join(lines) + "\n").encode("utf-8")


class _Lines:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0
        self.number = 0
        self.start = 0

    def fail(self, message: str) -> CertificateDecodeError:
        return CertificateDecodeError(message, self.offset, max(self.number, 1))

    def next(self, what: str) -> str:
        if self.offset >= len(self.data):
            self.number += 1
            raise self.fail(f"unexpected end of input, expected {what}")
        end = self.data.find(b"\n", self.offset)
        if end < 0:
            self.number += 1
            raise self.fail(f"missing line feed after {what}")
        raw = self.data[self.offset : end]
        self.number += 1
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise self.fail(f"invalid UTF-8 in {what}") from exc
        self.start = self.offset
        self.offset = end + 1
        return text

    def field(self, key: str) -> str:
        line = self.next(f"'{key}: ...'")
        prefix = f"{key}: "
        if not line.startswith(prefix):
            raise self.at_line(f"expected '{prefix}...'")
        return line[len(prefix) :]

    def at_line(self, message: str) -> CertificateDecodeError:
        return CertificateDecodeError(message, self.start, self.number)


def decode(data: bytes) -> Certificate:
    if not data:
        raise CertificateDecodeError("empty input", 0, 1)
    lines = _Lines(data)

    header = lines.next("the certificate header")
    magic, _, version_text = header.partition(" ")
    if magic != MAGIC or not _DIGITS.fullmatch(version_text):
        raise lines.at_line(f"expected '{MAGIC} <version>'")
    version = int(version_text)

    producer = lines.field("producer")
    algorithm = lines.field("digest-algorithm")
    if algorithm != DIGEST_ALGORITHM:
        raise lines.at_line(f"unsupported digest algorithm {algorithm!r}")
    try:
        controller = ControllerVariant(lines.field("controller"))
    except ValueError as exc:
        raise lines.at_line("unknown controller variant") from exc

    values: dict[str, Fraction] = {}
    for name, dim in PARAMETER_DIMENSIONS.items():
        text = lines.field(f"param {name}")
        try:
            values[name] = parse_quantity(text, dim)
        except SafecaseError as exc:
            raise lines.at_line(str(exc)) from exc
    try:
        params = ScenarioParams(**values)
    except SafecaseError as exc:
        raise lines.at_line(str(exc)) from exc

    grid_values: dict[str, int] = {}
    for name in GRID_DIMENSIONS:
        number, _, unit = lines.field(f"grid {name}").partition(" ")
        if unit != _GRID_UNITS[name] or not _DIGITS.fullmatch(number):
            raise lines.at_line(f"expected '<integer> {_GRID_UNITS[name]}'")
        grid_values[name] = int(number)
    try:
        grid = Grid(**grid_values)
    except SafecaseError as exc:
        raise lines.at_line(str(exc)) from exc

    digest = lines.field("digest")
    if not _HEX_DIGEST.fullmatch(digest):
        raise lines.at_line("digest must be 64 lowercase hex digits")
    cells_text = lines.field("cells")
    if not _DIGITS.fullmatch(cells_text):
        raise lines.at_line("cell count must be a non-negative integer")

    speeds: list[int] = []
    while lines.offset < len(data):
        line = lines.next("a cell value")
        if len(line) != CELL_WIDTH or not _DIGITS.fullmatch(line):
            raise lines.at_line(f"cell values are {CELL_WIDTH} decimal digits")
        speeds.append(int(line))

    return Certificate(
        params=params,
        grid=grid,
        speeds=tuple(speeds),
        digest=digest,
        producer=producer,
        controller=controller,
        version=version,
        declared_cells=None if int(cells_text) == len(speeds) else int(cells_text),
    )


def read_certificate(path: Path) -> Certificate:
    return decode(path.read_bytes())


def write_certificate(path: Path, c: Certificate) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(c))


def _invalid(reason: str, detail: str, cell: int | None = None) -> CertificateVerdict:
    return CertificateVerdict(False, reason, cell, detail)


def _admissible(v: int, d: int, p: ScenarioParams) -> bool:
    return stopping_distance(v, p) <= math.floor(d - p.epsilon_mm - p.margin_mm)


def _cell_claim(
    c: Certificate, p: ScenarioParams, cell: int, braking: tuple[int, ...]
) -> CertificateVerdict | None:
    """The claimed speed must be exactly the largest grid speed whose stop fits the cell."""
    d = cell * c.grid.d_step
    claimed = c.speeds[cell]
    if claimed % c.grid.v_step or claimed > c.grid.v_max:
        return _invalid("PAYLOAD_NOT_ON_GRID", f"{claimed} mm/s is not a grid speed", cell)
    if claimed > 0 and d <= 0:
        return _invalid("COLLISION", f"{claimed} mm/s claimed with no distance left", cell)
    if claimed > 0 and not _admissible(claimed, d, p):
        need = stopping_distance(claimed, p)
        return _invalid(
            "CLOSURE_FAIL",
            f"{claimed} mm/s needs {need} mm to stop, the cell leaves {d} mm before tolerance and margin",
            cell,
        )
    if claimed >= len(braking) or braking[claimed] > min(d, p.range_mm):
        return _invalid("CLOSURE_FAIL", f"{claimed} mm/s at {d} mm is outside the braking region", cell)
    higher = claimed + c.grid.v_step
    if higher <= c.grid.v_max and _admissible(higher, d, p):
        return _invalid("ENVELOPE_MISMATCH", f"{higher} mm/s is also certifiable", cell)
    return None


def _speeds_closure(
    speeds: range, c: Certificate, p: ScenarioParams, braking: tuple[int, ...]
) -> CertificateVerdict | None:
    """Closure of the braking region from the tightest gap of each control action."""
    limit = p.range_mm
    sensor_errors = sorted({err for err, _ in extreme_disturbances(p)})

    def leaves(start: VehicleState, areq: Fraction, err: int) -> CertificateVerdict | None:
        cell = c.grid.cell_of(start.gap)
        for act in (-p.delta_mm, p.delta_mm):
            after = plant_step(start, areq, Disturbance(err, act, True), p)
            gap = after.xp - after.x
            if gap < 0 or (gap == 0 and after.v > 0):
                where = f"({start.gap} mm, {start.v} mm/s)"
                return _invalid("COLLISION", f"from {where} the vehicle reaches the pedestrian", cell)
            if after.v >= len(braking) or braking[after.v] > gap:
                return _invalid(
                    "CLOSURE_FAIL",
                    f"from ({start.gap} mm, {start.v} mm/s) the successor ({gap} mm, {after.v} mm/s)"
                    " leaves the braking region",
                    cell,
                )
        return None

    for v in speeds:
        floor_gap = braking[v]
        problem = leaves(VehicleState(0, v, floor_gap, True), p.a_min_mm, 0)
        if problem is not None:
            return problem
        for err in sensor_errors:
            gap = max(floor_gap, cruise_threshold(v, err, p, c.controller))
            if gap > limit:
                continue
            start = VehicleState(0, v, gap, True)
            problem = leaves(start, controller(sense(start, err), v, 0, p, c.controller), err)
            if problem is not None:
                return problem
    return None


def check_certificate(
    c: Certificate,
    p: ScenarioParams,
    jobs: int = 1,
    on_cell: Callable[[int], None] | None = None,
) -> CertificateVerdict:
    """Re-derive every claim of ``c`` for the scenario ``p``; never raises on bad input.

    ``on_cell`` is called once per distance cell claim and once per speed band of the closure check.
    """
    try:
        return _check(c, p, jobs, on_cell)
    except SafecaseError as exc:
        return _invalid("PARAMS_INVALID", str(exc))


def _check(
    c: Certificate, p: ScenarioParams, jobs: int, on_cell: Callable[[int], None] | None
) -> CertificateVerdict:
    if c.version != FORMAT_VERSION:
        return _invalid("VERSION_MISMATCH", f"format version {c.version}, expected {FORMAT_VERSION}")
    if c.cell_count != len(c.speeds) or len(c.speeds) != c.grid.cell_count:
        return _invalid(
            "LENGTH_MISMATCH",
            f"{len(c.speeds)} cell values, header says {c.cell_count}, grid has {c.grid.cell_count}",
        )
    if c.params != p:
        return _invalid("PARAMS_MISMATCH", "certificate parameters differ from the scenario")
    if params_digest(p, c.grid, c.controller) != c.digest:
        return _invalid("PARAMS_MISMATCH", "digest does not match the parameters and grid")
    if not c.controller.certifiable:
        return _invalid("CONTROLLER_EXCLUDED", f"the {c.controller.value} controller is never certified")

    # the plant never brakes shorter than v^2 / 2 b_eff
    fastest = math.isqrt(math.ceil(2 * p.b_eff_mm * p.range_mm)) + 1
    braking = braking_distances(p, max(fastest, c.grid.v_max) + math.ceil(p.reaction_accel_mm * p.T) + 1)
    top = max(v for v in range(fastest + 1) if braking[v] <= p.range_mm)

    for cell in range(len(c.speeds)):
        problem = _cell_claim(c, p, cell, braking)
        if on_cell is not None:
            on_cell(cell)
        if problem is not None:
            return problem

    needed = math.ceil(p.v_target_mm)
    covered = c.speeds[c.grid.cell_of(p.range_mm)]
    if needed > covered:
        return _invalid(
            "INITIAL_NOT_COVERED",
            f"detection at range allows {covered} mm/s, cruise needs {needed} mm/s",
            c.grid.cell_of(p.range_mm),
        )

    bands = [range(lo, min(lo + c.grid.v_step, top + 1)) for lo in range(0, top + 1, c.grid.v_step)]

    def run(index: int) -> CertificateVerdict | None:
        verdict = _speeds_closure(bands[index], c, p, braking)
        if on_cell is not None:
            on_cell(index)
        return verdict

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            outcomes = list(executor.map(run, range(len(bands))))
    else:
        outcomes = map(run, range(len(bands)))
    for outcome in outcomes:
        if outcome is not None:
            return outcome
    logger.debug("certificate %s accepted, closure checked up to %d mm/s", c.digest[:12], top)
    return CertificateVerdict(True)
