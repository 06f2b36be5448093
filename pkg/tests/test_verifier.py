from __future__ import annotations

import dataclasses
import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import COARSE_GRID
from safecase.core.errors import SafecaseError, TraceError
from safecase.engine.certificate import Certificate, check_certificate
from safecase.engine.grid import Grid, resolve_grid
from safecase.engine.scenario import (
    ControllerVariant,
    Disturbance,
    VehicleState,
    closed_loop_step,
    collision,
    stopping_distance,
)
from safecase.engine.verifier import (
    EXCLUDED,
    Counterexample,
    NotProvable,
    braking_region,
    closure_failures,
    compute_safe_envelope,
    initial_inclusion,
    replay,
    replay_trace,
    search_counterexample,
    verify_closed_loop,
)

LATTICE = [Fraction(0), Fraction(1, 4), Fraction(1, 2)]


def room(p, d: int) -> int:
    return math.floor(d - p.epsilon_mm - p.margin_mm)


def test_envelope_values(params, default_grid):
    env = compute_safe_envelope(params, default_grid)
    assert env.max_speed(100000) == 32000
    assert env.max_speed(10000) == 9000
    assert env.max_speed(2000) == 2500
    assert env.max_speed(1500) == 1500
    assert env.max_speed(0) == 0
    assert env.max_speed(-1) == 0
    assert env.contains(-1, 0)


def test_no_speed_fits_inside_tolerance_and_margin(params, default_grid):
    env = compute_safe_envelope(params, default_grid)
    # 0.5 m of tolerance plus 0.5 m of margin
    for d in (0, 500, 999):
        assert env.max_speed(d) == 0
    assert not env.contains(500, 2000)


def test_envelope_is_monotone_and_stops_in_time(params, default_grid):
    env = compute_safe_envelope(params, default_grid)
    assert list(env.speeds) == sorted(env.speeds)
    for cell, v in enumerate(env.speeds):
        assert v == 0 or stopping_distance(v, params) <= room(params, default_grid.distance(cell))


def test_envelope_lies_inside_the_braking_region(params, default_grid):
    env = compute_safe_envelope(params, default_grid)
    region = braking_region(params)
    for cell, v in enumerate(env.speeds):
        assert region.contains(default_grid.distance(cell), v)


def test_braking_region_extent(params):
    region = braking_region(params)
    assert region.limit == params.range_mm
    assert region.distances[region.top] <= params.range_mm < region.distances[region.top + 1]
    assert region.contains(0, 0)
    assert not region.contains(0, 1)


def test_nominal_closure(params, coarse_grid):
    assert closure_failures(params, coarse_grid) == []
    assert closure_failures(params, coarse_grid, jobs=3) == []
    assert initial_inclusion(params, compute_safe_envelope(params, coarse_grid))


def test_margin_absorbs_rounding_and_actuator_error(params, coarse_grid):
    bare = params.replace(margin=Fraction(0))
    failures = closure_failures(bare, coarse_grid)
    assert failures
    assert {f.code for f in failures} <= {"CLOSURE_FAIL", "COLLISION"}


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_region_states_stay_in_the_region(params, data):
    """Any in-contract disturbance, not only the corners, keeps the vehicle in the region."""
    region = braking_region(params)
    v = data.draw(st.integers(min_value=0, max_value=region.top))
    gap = data.draw(st.integers(min_value=region.distances[v], max_value=region.limit))
    err = data.draw(st.integers(min_value=-gap, max_value=math.floor(params.epsilon_mm)))
    act = data.draw(st.integers(min_value=-500, max_value=500))
    nxt = closed_loop_step(VehicleState(0, v, gap, True), Disturbance(err, Fraction(act), True), params)
    assert not collision(nxt)
    assert region.contains(nxt.gap, nxt.v)


def test_coarse_certificate(coarse_certificate, params, coarse_grid):
    assert coarse_certificate.grid == coarse_grid
    assert coarse_certificate.producer == "tests"
    assert coarse_certificate.controller is ControllerVariant.NOMINAL
    assert coarse_certificate.speeds[-1] == 32000
    assert check_certificate(coarse_certificate, params).valid


def test_ignoring_the_tolerance_breaks_closure(params, coarse_grid):
    failures = closure_failures(params, coarse_grid, ControllerVariant.IGNORE_TOLERANCE)
    assert any(f.code == "COLLISION" for f in failures)
    assert closure_failures(params, coarse_grid, ControllerVariant.NO_REACTION)


def test_ignoring_a_wide_tolerance_collides(tolerance_heavy, coarse_grid):
    result = verify_closed_loop(tolerance_heavy, coarse_grid, ControllerVariant.IGNORE_TOLERANCE)
    assert isinstance(result, Counterexample)
    assert result.variant is ControllerVariant.IGNORE_TOLERANCE
    assert result.impact_speed > 0
    assert result.step == len(result.disturbances) - 1
    assert not result.initial.in_path
    assert result.disturbances[0].ped_enters
    assert replay(result, tolerance_heavy)


def test_nominal_controller_survives_the_same_trace(tolerance_heavy, coarse_grid):
    trace = search_counterexample(tolerance_heavy, coarse_grid, ControllerVariant.IGNORE_TOLERANCE)
    assert trace is not None
    outcome = replay_trace(trace, tolerance_heavy, ControllerVariant.NOMINAL)
    assert not outcome.collided
    assert not replay(trace, tolerance_heavy, ControllerVariant.NOMINAL)


def test_nominal_search_finds_nothing(tolerance_heavy, coarse_grid):
    assert search_counterexample(tolerance_heavy, coarse_grid, horizon=200) is None


def test_replay_requires_the_exact_step(tolerance_heavy, coarse_grid):
    trace = search_counterexample(tolerance_heavy, coarse_grid, ControllerVariant.IGNORE_TOLERANCE)
    shifted = Counterexample(trace.initial, trace.disturbances, trace.step + 1, trace.variant)
    assert replay_trace(shifted, tolerance_heavy).collided
    assert not replay(shifted, tolerance_heavy)


def test_counterexample_dict_round_trip(tolerance_heavy, coarse_grid):
    trace = search_counterexample(tolerance_heavy, coarse_grid, ControllerVariant.IGNORE_TOLERANCE)
    data = trace.to_dict()
    assert data["ok"] is False
    assert data["kind"] == "counterexample"
    assert Counterexample.from_dict(data) == trace


def test_malformed_counterexample():
    with pytest.raises(TraceError):
        Counterexample.from_dict({"initial": {}, "disturbances": []})


def test_uncovered_initial_state_is_not_provable(params):
    # a 10 m range cannot hold a 70 km/h approach
    short = params.replace(range=Fraction(10))
    result = verify_closed_loop(short, Grid(10000, 2000, 40000, 1000), horizon=0)
    assert isinstance(result, NotProvable)
    assert not result.initial_covered
    assert result.failures == ()
    assert result.to_dict()["reason"] == "NOT_PROVABLE_AT_GRID"


def test_pass_controller_is_never_certified(params, coarse_grid):
    result = verify_closed_loop(params, coarse_grid, ControllerVariant.PASS, horizon=50)
    assert isinstance(result, NotProvable)
    assert result.reason == EXCLUDED
    zeros = (0,) * coarse_grid.cell_count
    with pytest.raises(SafecaseError):
        Certificate.create(params, coarse_grid, zeros, "tests", ControllerVariant.PASS)


def test_pass_controller_runs_into_a_late_detection(params):
    late = params.replace(range=Fraction(20))
    result = verify_closed_loop(late, resolve_grid(late.range_mm, COARSE_GRID), ControllerVariant.PASS)
    assert isinstance(result, Counterexample)
    assert result.variant is ControllerVariant.PASS
    assert replay(result, late)


@pytest.mark.slow
def test_default_grid_certificate(params, default_grid):
    result = verify_closed_loop(params, default_grid, jobs=4)
    assert isinstance(result, Certificate)
    assert check_certificate(result, params).valid


@pytest.mark.slow
def test_default_grid_ignore_tolerance(params, default_grid):
    result = verify_closed_loop(params, default_grid, ControllerVariant.IGNORE_TOLERANCE)
    assert isinstance(result, Counterexample)
    assert result.initial.v <= params.v_target_mm
    assert replay(result, params)


@pytest.mark.slow
def test_not_provable_means_a_trace_or_a_finer_grid(params):
    # 28.5 m/s fits 80 m of range only at half a metre per second of speed resolution
    narrow = params.replace(range=Fraction(80), v_target=Fraction(57, 2))
    grid = resolve_grid(narrow.range_mm, COARSE_GRID)
    result = verify_closed_loop(narrow, grid)
    assert isinstance(result, NotProvable)
    assert not result.initial_covered
    assert result.failures == ()
    refined = verify_closed_loop(narrow, grid.refined())
    assert isinstance(refined, Certificate)
    assert check_certificate(refined, narrow).valid


def test_envelope_closed_form_without_reaction(params, default_grid):
    # b_eff = 5 m/s^2, no tolerance, no margin: 10 m stops exactly 10 m/s
    quick = params.replace(a_min=Fraction(-11, 2), epsilon=Fraction(0), margin=Fraction(0))
    assert compute_safe_envelope(quick, default_grid, reaction=Fraction(0)).max_speed(10000) == 10000


def test_envelope_matches_brute_force(params, coarse_grid):
    env = compute_safe_envelope(params, coarse_grid)
    for cell in range(coarse_grid.cell_count):
        d = coarse_grid.distance(cell)
        fitting = [v for v in coarse_grid.speeds() if stopping_distance(v, params) <= room(params, d)]
        assert env.speeds[cell] == max(fitting, default=0)


@pytest.mark.parametrize(
    "field,low,high",
    [
        ("epsilon", Fraction(0), Fraction(1)),
        ("delta", Fraction(0), Fraction(1)),
        ("T", Fraction(1, 20), Fraction(1, 5)),
        ("margin", Fraction(0), Fraction(2)),
    ],
)
def test_envelope_shrinks_with_worse_parameters(params, coarse_grid, field, low, high):
    better = compute_safe_envelope(params.replace(**{field: low}), coarse_grid)
    worse = compute_safe_envelope(params.replace(**{field: high}), coarse_grid)
    assert all(w <= b for w, b in zip(worse.speeds, better.speeds))
    assert worse.speeds != better.speeds


def test_envelope_grows_with_braking_power(params, coarse_grid):
    weak = compute_safe_envelope(params.replace(a_min=Fraction(-4)), coarse_grid)
    strong = compute_safe_envelope(params.replace(a_min=Fraction(-8)), coarse_grid)
    assert all(w <= s for w, s in zip(weak.speeds, strong.speeds))
    assert weak.speeds != strong.speeds


def test_envelope_over_the_tolerance_lattice(params, default_grid):
    envelopes = {
        (eps, delta): compute_safe_envelope(params.replace(epsilon=eps, delta=delta), default_grid).speeds
        for eps in LATTICE
        for delta in LATTICE
    }
    for (eps, delta), speeds in envelopes.items():
        for worse in ((eps + Fraction(1, 4), delta), (eps, delta + Fraction(1, 4))):
            if worse in envelopes:
                assert all(w <= s for w, s in zip(envelopes[worse], speeds))
    assert envelopes[(Fraction(0), Fraction(0))][-1] == 33750
    assert envelopes[(Fraction(1, 2), Fraction(0))][-1] == 33500
    assert envelopes[(Fraction(1, 2), Fraction(1, 2))][-1] == 32000


@pytest.mark.slow
@pytest.mark.parametrize("eps", LATTICE)
@pytest.mark.parametrize("delta", LATTICE)
def test_tolerance_lattice_is_certified(params, coarse_grid, eps, delta):
    p = params.replace(epsilon=eps, delta=delta)
    result = verify_closed_loop(p, coarse_grid)
    assert isinstance(result, Certificate)
    assert check_certificate(result, p).valid


def test_standing_vehicle_is_certified(params, coarse_grid):
    assert isinstance(verify_closed_loop(params.replace(v_target=Fraction(0)), coarse_grid), Certificate)


def test_truncated_trace_does_not_replay(tolerance_heavy, coarse_grid):
    trace = search_counterexample(tolerance_heavy, coarse_grid, ControllerVariant.IGNORE_TOLERANCE)
    cut = Counterexample(trace.initial, trace.disturbances[:-1], trace.step, trace.variant)
    assert not replay(cut, tolerance_heavy)


def test_out_of_bounds_trace_is_rejected(tolerance_heavy, coarse_grid):
    trace = search_counterexample(tolerance_heavy, coarse_grid, ControllerVariant.IGNORE_TOLERANCE)
    first = trace.disturbances[0]
    forged = dataclasses.replace(first, act_err=tolerance_heavy.delta_mm + 1)
    bad = Counterexample(trace.initial, (forged,) + trace.disturbances[1:], trace.step, trace.variant)
    with pytest.raises(TraceError):
        replay(bad, tolerance_heavy)


def run_campaign(p, seeds: range, traces: int) -> int:
    """Random in-bounds disturbances from detection at range; returns the number of collisions.

    The pedestrian is static, so entering on the first tick dominates every later entry time.
    """
    collisions = 0
    top = math.floor(p.v_target_mm)
    eps, delta = math.floor(p.epsilon_mm), int(p.delta_mm)
    for seed in seeds:
        rng = random.Random(seed)
        for _ in range(traces):
            state = VehicleState(0, rng.randint(0, top), p.range_mm, True)
            settle = 0
            for _ in range(600):
                dist = Disturbance(rng.randint(0, eps), Fraction(rng.randint(-delta, delta)), True)
                state = closed_loop_step(state, dist, p)
                if collision(state) or state.gap < 0:
                    collisions += 1
                    break
                if state.v == 0:
                    settle += 1
                if settle > 20:
                    break
    return collisions


def test_random_disturbances_never_collide(params):
    assert run_campaign(params, range(2), 50) == 0


@pytest.mark.slow
def test_hundred_thousand_random_traces_never_collide(params):
    assert run_campaign(params, range(100), 1000) == 0
