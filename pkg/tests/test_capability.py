from __future__ import annotations

import math
from fractions import Fraction

import pytest

from safecase.api.sdk import data_path
from safecase.core.errors import QrnDomainError, TableError
from safecase.engine.capability import (
    KMH_TO_MM_S,
    EntryTiming,
    IncidentModel,
    capability_table,
    impact_distribution,
    load_incident_model,
    parse_incident_model,
    uniform_incident_model,
)
from safecase.engine.qrn import Band, CapabilityTable, admissible_speeds, parse_risk_norms
from safecase.engine.scenario import impact_speed

OFFSET_MODEL = '[model]\nentry = "offset"\n\n[distances]\n1 = 1\n\n[offsets]\n1 = 1\n'


def tail(distribution: dict[Band, Fraction], lower: int) -> Fraction:
    return sum((w for band, w in distribution.items() if band.lower >= lower), Fraction(0))


def test_detection_at_contact(params, risk_norms):
    model = IncidentModel(((0, Fraction(1)),))
    result = impact_distribution(params, 60, model, risk_norms)
    assert result[Band.parse("40-")] == 1
    assert sum(result.values()) == 1


def test_far_detection_never_hits(params, risk_norms):
    model = IncidentModel(((100000, Fraction(1)),))
    assert sum(impact_distribution(params, 30, model, risk_norms).values()) == 0


def test_stopped_vehicle(params, risk_norms):
    model = IncidentModel(((0, Fraction(1)),))
    assert sum(impact_distribution(params, 0, model, risk_norms).values()) == 0


def test_shipped_model(params, risk_norms):
    model = load_incident_model(data_path("incidents.tbl"))
    assert model.timing is EntryTiming.ADVERSARIAL
    assert model.entries[0] == (10000, Fraction(1, 10))
    for speed in (30, 50, 70):
        assert sum(impact_distribution(params, speed, model, risk_norms).values()) <= 1


def test_faster_approach_shifts_the_tail(params, risk_norms):
    model = load_incident_model(data_path("incidents.tbl"))
    rows = [impact_distribution(params, speed, model, risk_norms) for speed in (30, 50, 70)]
    for lower in (0, 10, 20, 30, 40):
        assert tail(rows[0], lower) <= tail(rows[1], lower) <= tail(rows[2], lower)
    assert tail(rows[2], 0) > 0


def test_uniform_model_matches_direct_simulation(params, risk_norms):
    model = uniform_incident_model(0, 60000, 200)
    assert len(model.entries) == 200
    assert model.entries[0][0] == 0 and model.entries[-1][0] == 60000
    v_mm = math.ceil(50 * KMH_TO_MM_S)
    expected = {band: Fraction(0) for band, _ in risk_norms.bands}
    for d, weight in model.entries:
        speed = impact_speed(v_mm, d, params)
        if speed:
            expected[risk_norms.band_for(speed / KMH_TO_MM_S)] += weight
    assert impact_distribution(params, 50, model, risk_norms, jobs=4) == expected


def test_offset_timing_lets_the_vehicle_pass(params, risk_norms):
    model = parse_incident_model(OFFSET_MODEL)
    assert model.incidents() == [(1000, 1000, Fraction(1))]
    assert sum(impact_distribution(params, 60, model, risk_norms).values()) == 0
    adversarial = IncidentModel(((1000, Fraction(1)),))
    assert sum(impact_distribution(params, 60, adversarial, risk_norms).values()) == 1


def test_model_errors():
    with pytest.raises(TableError, match="sum"):
        parse_incident_model("[distances]\n10 = 0.5\n20 = 0.4\n")
    with pytest.raises(TableError):
        IncidentModel(((1000, Fraction(-1)), (2000, Fraction(2))))
    with pytest.raises(TableError, match="millimetres"):
        parse_incident_model('[distances]\n"0.0005" = 1\n')
    with pytest.raises(TableError):
        parse_incident_model('[model]\nentry = "sometimes"\n\n[distances]\n1 = 1\n')
    with pytest.raises(TableError):
        IncidentModel(((1000, Fraction(1)),), offsets=((1000, Fraction(1)),))
    with pytest.raises(TableError):
        uniform_incident_model(10, 5, 3)


def test_speed_and_band_domain(params, risk_norms):
    model = IncidentModel(((0, Fraction(1)),))
    with pytest.raises(QrnDomainError):
        impact_distribution(params, -1, model, risk_norms)
    with pytest.raises(QrnDomainError):
        impact_distribution(params, 50, model, parse_risk_norms("[risk_norms]\n10-20 = 5\n"))


def test_capability_table_feeds_admissibility(params, risk_norms):
    model = load_incident_model(data_path("incidents.tbl"))
    table = capability_table(params, [30, 50, 70], model, risk_norms)
    assert table.speeds == [30, 50, 70]
    result = admissible_speeds(table, 1000, risk_norms)
    assert len(result.verdicts) == 3
    assert capability_table(params, [], model, risk_norms) == CapabilityTable({})


def test_certified_speeds_never_impact(params, risk_norms, coarse_certificate):
    grid = coarse_certificate.grid
    for cell, speed in enumerate(coarse_certificate.speeds):
        assert impact_speed(speed, cell * grid.d_step, params) == 0
    v_mm = math.ceil(70 * KMH_TO_MM_S)
    first = next(cell for cell, speed in enumerate(coarse_certificate.speeds) if speed >= v_mm)
    model = uniform_incident_model(first * grid.d_step, params.range_mm, 50)
    assert sum(impact_distribution(params, 70, model, risk_norms).values()) == 0
