from __future__ import annotations

from fractions import Fraction
from pathlib import Path

import pytest

from safecase.api.sdk import data_path
from safecase.engine.casefile import parse_casefile
from safecase.engine.certificate import Certificate
from safecase.engine.grid import Grid, resolve_grid
from safecase.engine.gsn import GoalStructure, GsnEdge, GsnNode, NodeKind, Relation
from safecase.engine.qrn import load_exposure, load_risk_norms
from safecase.engine.scenario import ScenarioParams, load_scenario
from safecase.engine.verifier import verify_closed_loop

# 2 m x 1 m/s cells over the default 100 m range: fast enough for every test run.
COARSE_GRID = {"d_step": "2 m", "v_step": "1 m/s", "v_max": "40 m/s"}


@pytest.fixture(scope="session")
def case_path() -> Path:
    return data_path("pedestrian.case")


@pytest.fixture(scope="session")
def shipped_case(case_path: Path) -> GoalStructure:
    return parse_casefile(case_path.read_bytes())


@pytest.fixture(scope="session")
def scenario_path() -> Path:
    return data_path("scenario.cfg")


@pytest.fixture(scope="session")
def params(scenario_path: Path) -> ScenarioParams:
    return load_scenario(scenario_path).params


@pytest.fixture(scope="session")
def default_grid(scenario_path: Path, params: ScenarioParams) -> Grid:
    return resolve_grid(params.range_mm, load_scenario(scenario_path).grid)


@pytest.fixture(scope="session")
def coarse_grid(params: ScenarioParams) -> Grid:
    return resolve_grid(params.range_mm, COARSE_GRID)


@pytest.fixture(scope="session")
def coarse_certificate(params: ScenarioParams, coarse_grid: Grid) -> Certificate:
    result = verify_closed_loop(params, coarse_grid, producer="tests")
    assert isinstance(result, Certificate)
    return result


@pytest.fixture(scope="session")
def risk_norms():
    return load_risk_norms(data_path("risk_norms.tbl"))


@pytest.fixture(scope="session")
def exposure():
    return load_exposure(data_path("exposure.tbl"))


@pytest.fixture
def tolerance_heavy(params: ScenarioParams) -> ScenarioParams:
    """Sensor tolerance large enough that ignoring it must end in a collision."""
    return params.replace(epsilon=Fraction(5))


def goal(node_id: str, text: str = "", undeveloped: bool = False) -> GsnNode:
    return GsnNode(node_id, NodeKind.GOAL, text or node_id, undeveloped)


def supported(source: str, target: str) -> GsnEdge:
    return GsnEdge(source, Relation.SUPPORTED_BY, target)


def in_context(source: str, target: str) -> GsnEdge:
    return GsnEdge(source, Relation.IN_CONTEXT_OF, target)
