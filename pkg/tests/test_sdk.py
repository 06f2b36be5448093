from __future__ import annotations

from fractions import Fraction

import pytest

from safecase import Safecase
from safecase.api.sdk import data_path, parse_road
from safecase.core.config import Config
from safecase.core.errors import QrnDomainError, SafecaseError
from safecase.engine.certificate import Certificate
from safecase.engine.scenario import ControllerVariant

COARSE = "d_step=2 m,v_step=1 m/s"


@pytest.fixture
def client(tmp_path):
    return Safecase.from_config(tmp_path / "absent.toml")


def test_from_config_without_a_file(client):
    assert client.config == Config()


def test_parse_road():
    assert parse_road("urban:50") == ("urban", 50)
    with pytest.raises(QrnDomainError):
        parse_road("urban")


def test_quantitative_helpers(client):
    assert client.budget(1000, 100000) == Fraction(1, 100)
    assert not client.allocate("0.01", {"sense": "0.006", "act": "0.005"}).passed
    result = client.admissible(
        data_path("capability60.tbl"), data_path("exposure.tbl"), data_path("risk_norms.tbl"), "urban:50"
    )
    assert result.max_admissible is None


def test_verify_check_and_evidence(client, tmp_path):
    scenario = data_path("scenario.cfg")
    out = tmp_path / "pedestrian.cert"
    result = client.verify(scenario, COARSE, out=out)
    assert isinstance(result, Certificate)
    assert client.check(out, scenario).valid
    case = tmp_path / "pedestrian.case"
    case.write_bytes(data_path("pedestrian.case").read_bytes())
    statuses = {check.solution: check.status for check in client.evidence(case, scenario)}
    assert statuses["Formal-proof"] == "valid"


def test_export_and_envelope(client):
    assert client.export(data_path("pedestrian.case"), "dot").startswith("digraph")
    with pytest.raises(ValueError):
        client.export(data_path("pedestrian.case"), "svg")
    env = client.envelope(data_path("scenario.cfg"), COARSE)
    assert env.max_speed(100000) == 32000


def test_pass_controller_is_opt_in(client):
    with pytest.raises(SafecaseError, match="pass_option"):
        client.verify(data_path("scenario.cfg"), COARSE, variant=ControllerVariant.PASS)


def test_capability(client):
    table = client.capability(data_path("scenario.cfg"), data_path("incidents.tbl"), [40])
    assert table.speeds == [40]
