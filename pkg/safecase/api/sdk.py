from __future__ import annotations

from fractions import Fraction
from importlib.resources import files
from pathlib import Path
from typing import Iterable, Mapping

from safecase.core.config import Config, default_config_path, load_config
from safecase.core.errors import QrnDomainError, SafecaseError
from safecase.core.reporter import Reporter
from safecase.engine.capability import capability_table, load_incident_model
from safecase.engine.casefile import parse_casefile, render_dot, render_json
from safecase.engine.certificate import (
    Certificate,
    CertificateVerdict,
    check_certificate,
    read_certificate,
    write_certificate,
)
from safecase.engine.evidence import EvidenceCheck, check_evidence
from safecase.engine.grid import Grid, parse_grid_spec, resolve_grid
from safecase.engine.gsn import GoalStructure
from safecase.engine.qrn import (
    Admissibility,
    Allocation,
    AllocationVerdict,
    CapabilityTable,
    Number,
    admissible_speeds,
    check_allocation,
    impact_budget,
    load_capability_table,
    load_exposure,
    load_risk_norms,
)
from safecase.engine.scenario import ControllerVariant, ScenarioParams, load_scenario
from safecase.engine.verifier import (
    Counterexample,
    SafeEnvelope,
    VerificationResult,
    compute_safe_envelope,
    replay,
    verify_closed_loop,
)


def data_path(name: str) -> Path:
    """Path of a fixture shipped in ``safecase/data``."""
    return Path(str(files("safecase").joinpath("data", name)))


def load_setup(scenario: Path, config: Config, grid_spec: str | None = None) -> tuple[ScenarioParams, Grid]:
    """Scenario parameters and the grid from Config, the scenario's [grid] and ``grid_spec``."""
    loaded = load_scenario(scenario)
    overrides = parse_grid_spec(grid_spec) if grid_spec else {}
    grid = resolve_grid(loaded.params.range_mm, config.grid_defaults(), loaded.grid, overrides)
    return loaded.params, grid


def parse_road(road: str) -> tuple[str, int]:
    kind, sep, speed = road.partition(":")
    if not sep or not speed.isdigit():
        raise QrnDomainError(f"road must look like 'urban:50', got {road!r}")
    return kind, int(speed)


class Safecase:
    """Programmatic API for embedding safecase in other tools."""

    def __init__(self, config: Config, config_path: Path | None = None) -> None:
        self.config = config
        self.config_path = config_path

    @classmethod
    def from_config(cls, config_path: Path | None = None) -> "Safecase":
        config_path = config_path or default_config_path()
        config = load_config(config_path if config_path.exists() else None)
        return cls(config=config, config_path=config_path)

    def load_case(self, path: Path) -> GoalStructure:
        return parse_casefile(path.read_bytes())

    def export(self, path: Path, fmt: str = "json") -> str:
        gs = self.load_case(path)
        if fmt == "dot":
            return render_dot(gs)
        if fmt == "json":
            return render_json(gs)
        raise ValueError(f"unknown export format {fmt!r}")

    def evidence(self, case_path: Path, scenario: Path | None = None) -> list[EvidenceCheck]:
        gs = self.load_case(case_path)
        params = load_scenario(scenario).params if scenario else None
        return check_evidence(gs, case_path.parent, params, jobs=self.config.jobs)

    def budget(self, exposure_h: Number, norm_h: Number) -> Fraction:
        return impact_budget(exposure_h, norm_h)

    def allocate(self, budget: Number, parts: Mapping[str, Number]) -> AllocationVerdict:
        allocation = Allocation(Fraction(budget), {k: Fraction(v) for k, v in parts.items()})
        return check_allocation(allocation)

    def admissible(
        self,
        capability: Path,
        exposure: Path,
        norms: Path,
        road: str,
        speeds: Iterable[Number] | None = None,
    ) -> Admissibility:
        kind, speed = parse_road(road)
        hours = load_exposure(exposure).exposure(kind, speed)
        return admissible_speeds(load_capability_table(capability), hours, load_risk_norms(norms), speeds)

    def envelope(self, scenario: Path, grid_spec: str | None = None) -> SafeEnvelope:
        params, grid = load_setup(scenario, self.config, grid_spec)
        return compute_safe_envelope(params, grid)

    def verify(
        self,
        scenario: Path,
        grid_spec: str | None = None,
        out: Path | None = None,
        variant: ControllerVariant = ControllerVariant.NOMINAL,
    ) -> VerificationResult:
        if variant is ControllerVariant.PASS and not self.config.pass_option:
            raise SafecaseError("the pass controller is disabled; set pass_option in the config")
        params, grid = load_setup(scenario, self.config, grid_spec)
        reporter = Reporter(quiet=True, progress=False)
        result = verify_closed_loop(
            params,
            grid,
            variant,
            horizon=self.config.horizon,
            jobs=self.config.jobs,
            producer=self.config.producer,
            reporter=reporter,
        )
        if out is not None and isinstance(result, Certificate):
            write_certificate(out, result)
        return result

    def check(self, certificate: Path, scenario: Path) -> CertificateVerdict:
        params = load_scenario(scenario).params
        return check_certificate(read_certificate(certificate), params, jobs=self.config.jobs)

    def replay(self, trace: Counterexample, scenario: Path) -> bool:
        return replay(trace, load_scenario(scenario).params)

    def capability(
        self,
        scenario: Path,
        incidents: Path,
        speeds: Iterable[Number],
        norms: Path | None = None,
    ) -> CapabilityTable:
        params = load_scenario(scenario).params
        bands = load_risk_norms(norms or data_path("risk_norms.tbl"))
        return capability_table(params, speeds, load_incident_model(incidents), bands, self.config.jobs)
