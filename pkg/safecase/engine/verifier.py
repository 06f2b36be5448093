"""Exhaustive closed-loop verification.

The certified invariant is the braking region: every state whose gap is within
sensor range and at least the plant's own braking distance from its speed.
Stopped states at a non-negative gap belong to it. ``verify_closed_loop``
checks its closure exactly, for every integer speed, from the tightest gap at
which each control action can occur, under every extreme disturbance. The
safe envelope (per distance cell, the largest grid speed whose full stopping
distance fits the cell after tolerance and margin) is the certificate payload;
it lies inside the region. When closure or initial coverage fails a
breadth-first search looks for a concrete collision trace.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping, Union

from safecase.core.errors import TraceError
from safecase.core.reporter import Reporter
from safecase.engine.certificate import Certificate, params_digest
from safecase.engine.grid import Grid
from safecase.engine.scenario import (
    ControllerVariant,
    Disturbance,
    ScenarioParams,
    VehicleState,
    braking_distances,
    closed_loop_step,
    collision,
    controller,
    cruise_threshold,
    extreme_disturbances,
    plant_step,
    sense,
    stopping_distance,
)

logger = logging.getLogger(__name__)

DEFAULT_HORIZON = 600
NOT_PROVABLE = "NOT_PROVABLE_AT_GRID"
EXCLUDED = "CONTROLLER_EXCLUDED"


@dataclass(frozen=True)
class SafeEnvelope:
    grid: Grid
    speeds: tuple[int, ...]
    params_digest: str

    def max_speed(self, d: int) -> int:
        cell = self.grid.cell_of(d)
        return 0 if cell < 0 else self.speeds[cell]

    def contains(self, d: int, v: int) -> bool:
        return v == 0 or v <= self.max_speed(d)

    def to_dict(self) -> dict[str, Any]:
        return {
            "grid": self.grid.to_dict(),
            "params_digest": self.params_digest,
            "cells": [
                {"distance_mm": self.grid.distance(i), "max_speed_mm_s": v}
                for i, v in enumerate(self.speeds)
            ],
        }


@dataclass(frozen=True)
class ClosureFailure:
    code: str
    cell: int
    speed: int
    detail: str

    def to_dict(self) -> dict[str, Any]:
        return {"code": self.code, "cell": self.cell, "speed": self.speed, "detail": self.detail}


@dataclass(frozen=True)
class Counterexample:
    initial: VehicleState
    disturbances: tuple[Disturbance, ...]
    step: int
    variant: ControllerVariant = ControllerVariant.NOMINAL
    impact_speed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "ok": False,
            "kind": "counterexample",
            "variant": self.variant.value,
            "initial": self.initial.to_dict(),
            "step": self.step,
            "impact_speed_mm_s": self.impact_speed,
            "disturbances": [d.to_dict() for d in self.disturbances],
        }

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> "Counterexample":
        try:
            return Counterexample(
                initial=VehicleState.from_dict(data["initial"]),
                disturbances=tuple(Disturbance.from_dict(item) for item in data["disturbances"]),
                step=int(data["step"]),
                variant=ControllerVariant(data.get("variant", ControllerVariant.NOMINAL.value)),
                impact_speed=int(data.get("impact_speed_mm_s", 0)),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise TraceError(f"malformed counterexample: {exc}") from exc


@dataclass(frozen=True)
class NotProvable:
    failures: tuple[ClosureFailure, ...] = ()
    initial_covered: bool = True
    reason: str = NOT_PROVABLE

    def to_dict(self) -> dict[str, Any]:
        return {
            "ok": False,
            "kind": "not-provable",
            "reason": self.reason,
            "initial_covered": self.initial_covered,
            "failures": [f.to_dict() for f in self.failures[:20]],
            "failure_count": len(self.failures),
        }


VerificationResult = Union[Certificate, Counterexample, NotProvable]


@dataclass(frozen=True)
class ReplayOutcome:
    collided: bool
    step: int | None
    impact_speed: int
    states: tuple[VehicleState, ...] = field(default_factory=tuple)


def compute_safe_envelope(
    p: ScenarioParams, g: Grid, reaction: Fraction | None = None
) -> SafeEnvelope:
    """Largest grid speed per cell whose stopping distance fits the cell after tolerance and margin.

    ``reaction`` is passed through to ``stopping_distance``.
    """
    candidates = g.speeds()
    speeds = []
    index = 0
    for cell in range(g.cell_count):
        room = math.floor(g.distance(cell) - p.epsilon_mm - p.margin_mm)
        while index + 1 < len(candidates) and stopping_distance(candidates[index + 1], p, reaction) <= room:
            index += 1
        speeds.append(candidates[index])
    logger.debug("envelope over %d cells, top speed %d mm/s", g.cell_count, speeds[-1])
    return SafeEnvelope(g, tuple(speeds), params_digest(p, g, ControllerVariant.NOMINAL))


@dataclass(frozen=True)
class BrakingRegion:
    """Braking distance per integer speed, up to the fastest speed that fits in sensor range."""

    distances: tuple[int, ...]
    top: int
    limit: int

    def contains(self, gap: int, v: int) -> bool:
        return v < len(self.distances) and gap <= self.limit and self.distances[v] <= gap


def braking_region(p: ScenarioParams) -> BrakingRegion:
    limit = p.range_mm
    # the plant never brakes shorter than v^2 / 2 b_eff
    fastest = math.isqrt(math.ceil(2 * p.b_eff_mm * limit)) + 1
    table = braking_distances(p, fastest + math.ceil(p.reaction_accel_mm * p.T) + 1)
    top = max(v for v in range(fastest + 1) if table[v] <= limit)
    return BrakingRegion(tuple(table), top, limit)


def _closure_of_speeds(
    speeds: range, p: ScenarioParams, g: Grid, region: BrakingRegion, variant: ControllerVariant
) -> list[ClosureFailure]:
    failures: list[ClosureFailure] = []
    sensor_errors = sorted({err for err, _ in extreme_disturbances(p)})

    def judge(start: VehicleState, nxt: VehicleState) -> None:
        cell = g.cell_of(start.gap)
        if nxt.gap < 0 or collision(nxt):
            failures.append(
                ClosureFailure("COLLISION", cell, start.v, f"reaches the pedestrian at {nxt.v} mm/s")
            )
        elif not region.contains(nxt.gap, nxt.v):
            failures.append(
                ClosureFailure(
                    "CLOSURE_FAIL",
                    cell,
                    start.v,
                    f"from {start.gap} mm the successor ({nxt.gap} mm, {nxt.v} mm/s) leaves the region",
                )
            )

    for v in speeds:
        floor_gap = region.distances[v]
        # a reading at the vehicle's own position is in contract and always brakes
        braking = VehicleState(x=0, v=v, xp=floor_gap, in_path=True)
        for act in (-p.delta_mm, p.delta_mm):
            judge(braking, plant_step(braking, p.a_min_mm, Disturbance(0, act, True), p))
        for err in sensor_errors:
            gap = max(floor_gap, cruise_threshold(v, err, p, variant))
            if gap > region.limit:
                continue
            cruising = VehicleState(x=0, v=v, xp=gap, in_path=True)
            areq = controller(sense(cruising, err), v, 0, p, variant)
            for act in (-p.delta_mm, p.delta_mm):
                judge(cruising, plant_step(cruising, areq, Disturbance(err, act, True), p))
    return failures


def closure_failures(
    p: ScenarioParams,
    g: Grid,
    variant: ControllerVariant = ControllerVariant.NOMINAL,
    jobs: int = 1,
    reporter: Reporter | None = None,
) -> list[ClosureFailure]:
    """Every way the braking region fails to be closed under the controller ``variant``."""
    reporter = reporter or Reporter(quiet=True, progress=False)
    region = braking_region(p)
    bands = [
        range(lo, min(lo + g.v_step, region.top + 1)) for lo in range(0, region.top + 1, g.v_step)
    ]
    found: list[ClosureFailure] = []
    with reporter.progress("Checking closure") as progress:
        task = progress.add_task("closure", total=len(bands))

        def run(band: range) -> list[ClosureFailure]:
            result = _closure_of_speeds(band, p, g, region, variant)
            progress.advance(task, 1)
            return result

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as executor:
                for result in executor.map(run, bands):
                    found.extend(result)
        else:
            for band in bands:
                found.extend(run(band))
    logger.debug("closure checked for speeds 0..%d mm/s", region.top)
    return found


def initial_inclusion(p: ScenarioParams, env: SafeEnvelope) -> bool:
    return math.ceil(p.v_target_mm) <= env.max_speed(p.range_mm)


def _braking_slack(state: VehicleState, p: ScenarioParams) -> Fraction:
    return state.gap - Fraction(state.v * state.v) / (2 * p.b_eff_mm)


def search_counterexample(
    p: ScenarioParams,
    g: Grid,
    variant: ControllerVariant = ControllerVariant.NOMINAL,
    horizon: int = DEFAULT_HORIZON,
) -> Counterexample | None:
    """Breadth-first adversarial search from detection at range.

    States are merged per (distance cell, speed cell), keeping the one with
    the least braking slack; a cell is expanded again only when a strictly
    tighter state reaches it.
    """
    top = math.floor(p.v_target_mm)
    initial_speeds = sorted(set(g.speeds(top)) | {top})
    corners = extreme_disturbances(p)

    def key(state: VehicleState) -> tuple[int, int]:
        return (g.cell_of(state.gap), state.v // g.v_step)

    best: dict[tuple[int, int], Fraction] = {}
    frontier: dict[tuple[int, int], tuple[VehicleState, VehicleState, tuple[Disturbance, ...]]] = {}
    for v0 in initial_speeds:
        start = VehicleState(x=0, v=v0, xp=p.range_mm, in_path=False)
        slack = _braking_slack(start, p)
        k = key(start)
        if k not in best or slack < best[k]:
            best[k] = slack
            frontier[k] = (start, start, ())

    for depth in range(1, horizon + 1):
        if not frontier:
            break
        upcoming: dict[tuple[int, int], tuple[VehicleState, VehicleState, tuple[Disturbance, ...]]] = {}
        for origin, state, trace in frontier.values():
            for err, act in corners:
                dist = Disturbance(err, act, ped_enters=depth == 1)
                nxt = closed_loop_step(state, dist, p, variant)
                path = trace + (dist,)
                if collision(nxt):
                    logger.info("collision after %d steps from %d mm/s", depth, origin.v)
                    return Counterexample(origin, path, len(path) - 1, variant, nxt.v)
                k = key(nxt)
                slack = _braking_slack(nxt, p)
                if k in best and slack >= best[k]:
                    continue
                best[k] = slack
                upcoming[k] = (origin, nxt, path)
        frontier = upcoming
        logger.debug("depth %d frontier %d", depth, len(frontier))
    return None


def verify_closed_loop(
    p: ScenarioParams,
    g: Grid,
    variant: ControllerVariant = ControllerVariant.NOMINAL,
    horizon: int = DEFAULT_HORIZON,
    jobs: int = 1,
    producer: str = "safecase",
    reporter: Reporter | None = None,
) -> VerificationResult:
    if not variant.certifiable:
        logger.info("controller %s is excluded from certificates, searching for a trace only", variant.value)
        trace = search_counterexample(p, g, variant, horizon)
        return trace if trace is not None else NotProvable(reason=EXCLUDED)
    env = compute_safe_envelope(p, g)
    failures = closure_failures(p, g, variant, jobs, reporter)
    covered = initial_inclusion(p, env)
    logger.info("closure failures: %d, initial states covered: %s", len(failures), covered)
    if not failures and covered:
        return Certificate.create(p, g, env.speeds, producer, variant)
    trace = search_counterexample(p, g, variant, horizon)
    if trace is not None:
        return trace
    return NotProvable(tuple(failures), covered)


def replay_trace(
    c: Counterexample, p: ScenarioParams, variant: ControllerVariant | None = None
) -> ReplayOutcome:
    chosen = c.variant if variant is None else variant
    state = c.initial
    states = [state]
    for index, dist in enumerate(c.disturbances):
        state = closed_loop_step(state, dist, p, chosen)
        states.append(state)
        if collision(state):
            return ReplayOutcome(True, index, state.v, tuple(states))
    return ReplayOutcome(False, None, 0, tuple(states))


def replay(c: Counterexample, p: ScenarioParams, variant: ControllerVariant | None = None) -> bool:
    """True iff re-simulation collides first at exactly the recorded step."""
    outcome = replay_trace(c, p, variant)
    return outcome.collided and outcome.step == c.step
