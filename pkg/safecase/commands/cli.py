from __future__ import annotations

import json
import logging
import sys
from contextlib import contextmanager, redirect_stderr, redirect_stdout
from fractions import Fraction
from io import StringIO
from pathlib import Path
from typing import Iterator, Optional, Sequence

import typer

from safecase import __version__
from safecase.api.sdk import data_path, load_setup, parse_road
from safecase.core.config import (
    Config,
    config_default_toml,
    config_to_toml,
    default_config_path,
    load_config,
)
from safecase.core.errors import CaseFileError, CertificateDecodeError, QrnDomainError, SafecaseError
from safecase.core.logging import configure_logging
from safecase.core.models import CommandOutcome, ExitCode
from safecase.core.reporter import Reporter
from safecase.core.units import format_decimal, parse_hours
from safecase.engine.capability import capability_table, load_incident_model
from safecase.engine.casefile import parse_casefile, render_dot, render_json
from safecase.engine.certificate import Certificate, check_certificate, decode, write_certificate
from safecase.engine.evidence import check_evidence
from safecase.engine.gsn import topological_order, trace_evidence, undeveloped_report
from safecase.engine.qrn import (
    Allocation,
    admissible_speeds,
    band_budgets,
    check_allocation,
    impact_budget,
    load_capability_table,
    load_exposure,
    load_risk_norms,
    mean_time_between,
    render_capability_table,
)
from safecase.engine.scenario import ControllerVariant, load_scenario
from safecase.engine.verifier import (
    Counterexample,
    NotProvable,
    compute_safe_envelope,
    replay_trace,
    verify_closed_loop,
)

logger = logging.getLogger(__name__)

APP_HELP = """Build, check and link safety-case evidence for an automated vehicle.

Case files (.case): one statement per line, '#' starts a comment. A declaration is
KIND ID "text" with an optional {undeveloped | root | evidence = "path"} block, KIND being
goal, strategy, solution, context or assumption. 'A <- B' means A is supported by B;
'A <~ C' means A is stated in the context of C. Exactly one goal carries root.

Grids (--grid): comma-separated KEY=VALUE items, KEY one of d_max, d_step, v_max, v_step,
each value with a unit, e.g. 'd_step=0.5 m,v_step=0.25 m/s'. d_max defaults to the range.

Roads (--road): KIND:SPEED naming an exposure table row and its speed limit in km/h, e.g. urban:50.

Durations (--exposure, --norm): hours, as a bare number or with a unit, e.g. '1000 h' or '30 d'.
"""

app = typer.Typer(
    add_completion=False,
    no_args_is_help=True,
    pretty_exceptions_enable=False,
    help=APP_HELP,
)
config_app = typer.Typer(help="Create or show the user configuration.")
app.add_typer(config_app, name="config")

SCENARIO_HELP = "Scenario file (TOML, unit-suffixed values); defaults to the shipped fixture"
GRID_HELP = "Grid overrides, e.g. 'd_step=0.5 m,v_step=0.25 m/s'"
VARIANT_HELP = "nominal, ignore-tolerance, no-reaction, or pass when pass_option is set"


@app.callback()
def main(
    ctx: typer.Context,
    version: bool = typer.Option(False, "--version", help="Show version and exit"),
    config_path: Optional[Path] = typer.Option(None, "--config", help="Config file path"),
    json_output: bool = typer.Option(False, "--json", help="JSON output"),
    quiet: bool = typer.Option(False, "--quiet", help="Suppress output"),
    verbose: bool = typer.Option(False, "--verbose", help="Verbose output"),
    debug: bool = typer.Option(False, "--debug", help="Debug output"),
    jobs: Optional[int] = typer.Option(None, "--jobs", min=1, help="Parallel jobs"),
    progress: Optional[bool] = typer.Option(None, "--progress/--no-progress", help="Progress UI"),
):
    if version:
        typer.echo(__version__)
        raise typer.Exit()

    ctx.ensure_object(dict)
    config_path = config_path or default_config_path()
    ctx.obj["config_path"] = config_path
    try:
        config = load_config(config_path if config_path.exists() else None)
    except SafecaseError as exc:
        typer.echo(f"error: {exc}", err=True)
        raise typer.Exit(code=ExitCode.USAGE)
    if jobs is not None:
        config.jobs = jobs
    ctx.obj["config"] = config
    configure_logging(verbose=verbose, debug=debug, level=config.log_level)
    progress_enabled = progress if progress is not None else config.show_progress
    ctx.obj["reporter"] = Reporter(json_output=json_output, quiet=quiet, progress=progress_enabled)


@contextmanager
def _inputs(reporter: Reporter, source: Path | None = None) -> Iterator[None]:
    """Invalid case files are verdicts (exit 1); unreadable or malformed inputs are usage errors (exit 2)."""
    try:
        yield
    except CaseFileError as exc:
        prefix = f"{source}:" if source else ""
        for diagnostic in exc.diagnostics:
            reporter.error(f"{prefix}{diagnostic} [{diagnostic.code}]")
        if reporter.json_output:
            reporter.emit_json({"ok": False, "diagnostics": [d.to_dict() for d in exc.diagnostics]})
        raise typer.Exit(code=ExitCode.VERDICT_FAILED)
    except (SafecaseError, OSError) as exc:
        message = f"{exc.filename}: {exc.strerror}" if isinstance(exc, OSError) and exc.filename else str(exc)
        reporter.error(message)
        if reporter.json_output:
            reporter.emit_json({"ok": False, "error": message})
        raise typer.Exit(code=ExitCode.USAGE)


def _finish(reporter: Reporter, outcome: CommandOutcome) -> None:
    if reporter.json_output:
        reporter.emit_json(outcome.to_dict())
    else:
        for line in outcome.lines:
            reporter.info(line)
    if not outcome.ok:
        raise typer.Exit(code=outcome.exit_code)


def _scenario(path: Optional[Path]) -> Path:
    return path or data_path("scenario.cfg")


def _variant(name: str, config: Config) -> ControllerVariant:
    try:
        chosen = ControllerVariant(name)
    except ValueError:
        choices = ", ".join(v.value for v in ControllerVariant)
        raise typer.BadParameter(f"variant must be one of {choices}")
    if chosen is ControllerVariant.PASS and not config.pass_option:
        raise typer.BadParameter("the pass controller is disabled; set pass_option = true in the config")
    return chosen


def _speed_list(text: str) -> list[Fraction]:
    try:
        return [Fraction(item.strip()) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise QrnDomainError(f"speeds must be a comma-separated list of km/h values: {exc}") from exc


@app.command("validate")
def validate_cmd(ctx: typer.Context, case: Path = typer.Argument(..., help=".case file")):
    """Parse a .case file and check GSN well-formedness."""
    reporter: Reporter = ctx.obj["reporter"]
    with _inputs(reporter, case):
        gs = parse_casefile(case.read_bytes())
    outcome = CommandOutcome(
        ok=True,
        payload={
            "root": gs.root,
            "nodes": len(gs.nodes),
            "edges": len(gs.edges),
            "order": topological_order(gs),
        },
        lines=[f"{case}: valid ({len(gs.nodes)} nodes, {len(gs.edges)} edges, root {gs.root})"],
    )
    _finish(reporter, outcome)


@app.command("undeveloped")
def undeveloped_cmd(ctx: typer.Context, case: Path = typer.Argument(..., help=".case file")):
    """List elements marked undeveloped."""
    reporter: Reporter = ctx.obj["reporter"]
    with _inputs(reporter, case):
        ids = undeveloped_report(parse_casefile(case.read_bytes()))
    _finish(reporter, CommandOutcome(ok=True, payload={"undeveloped": ids}, lines=ids))


@app.command("trace")
def trace_cmd(
    ctx: typer.Context,
    case: Path = typer.Argument(..., help=".case file"),
    goal: str = typer.Argument(..., help="Goal id"),
):
    """Show every SupportedBy path from a goal to its solutions."""
    reporter: Reporter = ctx.obj["reporter"]
    with _inputs(reporter, case):
        paths = trace_evidence(parse_casefile(case.read_bytes()), goal)
    lines = [" -> ".join(path) for path in paths] or [f"{goal}: no solutions below this goal"]
    _finish(reporter, CommandOutcome(ok=True, payload={"goal": goal, "paths": paths}, lines=lines))


@app.command("export")
def export_cmd(
    ctx: typer.Context,
    case: Path = typer.Argument(..., help=".case file"),
    fmt: str = typer.Option("json", "--format", help="dot or json"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write to a file instead of stdout"),
):
    """Render a goal structure as canonical JSON or Graphviz DOT."""
    reporter: Reporter = ctx.obj["reporter"]
    if fmt not in ("dot", "json"):
        raise typer.BadParameter("format must be 'dot' or 'json'", param_hint="--format")
    with _inputs(reporter, case):
        gs = parse_casefile(case.read_bytes())
        text = render_dot(gs) if fmt == "dot" else render_json(gs)
        if out is not None:
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(text, encoding="utf-8")
    if out is not None:
        _finish(reporter, CommandOutcome(ok=True, payload={"path": str(out)}, lines=[f"Wrote {out}"]))
    elif reporter.json_output:
        reporter.emit_json({"ok": True, "format": fmt, "text": text})
    else:
        reporter.write(text)


@app.command("evidence")
def evidence_cmd(
    ctx: typer.Context,
    case: Path = typer.Argument(..., help=".case file"),
    scenario: Optional[Path] = typer.Option(
        None, "--scenario", help="Check against these parameters instead of the embedded ones"
    ),
):
    """Check the certificate behind every Solution of a case."""
    reporter: Reporter = ctx.obj["reporter"]
    config: Config = ctx.obj["config"]
    with _inputs(reporter, case):
        gs = parse_casefile(case.read_bytes())
        params = load_scenario(scenario).params if scenario else None
        checks = check_evidence(gs, case.parent, params, jobs=config.jobs)
    failed = [check for check in checks if check.failed]
    for check in failed:
        reporter.error(f"{check.solution}: {check.status}: {check.detail}")
    reporter.table(
        "Evidence",
        ["Solution", "Evidence", "Status", "Detail"],
        [(c.solution, c.ref or "-", c.status, c.detail) for c in checks],
    )
    payload = {"checks": [check.to_dict() for check in checks]}
    _finish(reporter, CommandOutcome(ok=not failed, payload=payload))


@app.command("budget")
def budget_cmd(
    ctx: typer.Context,
    exposure: str = typer.Option(..., "--exposure", help="Mean time between incidents, e.g. '1000 h'"),
    norm: str = typer.Option(..., "--norm", help="Risk norm, mean time between impacts, e.g. '100000 h'"),
):
    """Largest admissible impact probability per incident."""
    reporter: Reporter = ctx.obj["reporter"]
    with _inputs(reporter):
        hours = parse_hours(exposure)
        value = impact_budget(hours, parse_hours(norm))
        interval = mean_time_between(hours, value)
    payload = {"budget": format_decimal(value), "mean_time_between": format_decimal(Fraction(interval))}
    _finish(reporter, CommandOutcome(ok=True, payload=payload, lines=[format_decimal(value)]))


@app.command("budgets")
def budgets_cmd(
    ctx: typer.Context,
    road: str = typer.Option(..., "--road", help="Exposure row, e.g. urban:50"),
    exposure: Optional[Path] = typer.Option(None, "--exposure", help="Exposure table (.tbl)"),
    norms: Optional[Path] = typer.Option(None, "--norms", help="Risk norm table (.tbl)"),
):
    """Impact budget per severity band for one exposure row."""
    reporter: Reporter = ctx.obj["reporter"]
    with _inputs(reporter):
        kind, speed = parse_road(road)
        hours = load_exposure(exposure or data_path("exposure.tbl")).exposure(kind, speed)
        rows = band_budgets(hours, load_risk_norms(norms or data_path("risk_norms.tbl")))
    reporter.table(
        f"Impact budgets for {road} ({format_decimal(hours)} h)",
        ["Band (km/h)", "Budget"],
        [(band.label, format_decimal(value)) for band, value in rows],
    )
    payload = {
        "road": road,
        "exposure": format_decimal(hours),
        "budgets": {band.label: format_decimal(value) for band, value in rows},
    }
    _finish(reporter, CommandOutcome(ok=True, payload=payload))


@app.command("allocate")
def allocate_cmd(
    ctx: typer.Context,
    budget: str = typer.Option(..., "--budget", help="Probability budget"),
    part: list[str] = typer.Option([], "--part", help="name=probability, repeatable"),
):
    """Check that component probabilities fit within a budget."""
    reporter: Reporter = ctx.obj["reporter"]
    with _inputs(reporter):
        parts: dict[str, Fraction] = {}
        for item in part:
            name, sep, value = item.partition("=")
            if not sep or not name.strip():
                raise QrnDomainError(f"part must look like name=probability, got {item!r}")
            try:
                parts[name.strip()] = Fraction(value.strip())
            except ValueError as exc:
                raise QrnDomainError(f"part {name.strip()}: {exc}") from exc
        try:
            total_budget = Fraction(budget)
        except ValueError as exc:
            raise QrnDomainError(f"budget: {exc}") from exc
        verdict = check_allocation(Allocation(total_budget, parts))
    summary = f"total {format_decimal(verdict.total)}, budget {format_decimal(verdict.budget)}"
    if not verdict.passed:
        excess = format_decimal(verdict.excess)
        reporter.error(f"allocation exceeds the budget by excess {excess} ({summary})")
    lines = [
        f"{'Pass' if verdict.passed else 'Fail'}: {summary}",
        f"model fulfilled with probability at least {format_decimal(verdict.fulfilment)}",
    ]
    outcome = CommandOutcome(ok=verdict.passed, payload=verdict.to_dict(), lines=lines)
    _finish(reporter, outcome)


@app.command("admissible")
def admissible_cmd(
    ctx: typer.Context,
    capability: Path = typer.Option(..., "--capability", help="Capability table (.tbl)"),
    road: str = typer.Option(..., "--road", help="Exposure row, e.g. urban:50"),
    exposure: Optional[Path] = typer.Option(None, "--exposure", help="Exposure table (.tbl)"),
    norms: Optional[Path] = typer.Option(None, "--norms", help="Risk norm table (.tbl)"),
    speeds: Optional[str] = typer.Option(None, "--speeds", help="Comma-separated km/h subset"),
):
    """Initial speeds whose impact frequencies meet every risk norm."""
    reporter: Reporter = ctx.obj["reporter"]
    with _inputs(reporter):
        kind, speed = parse_road(road)
        hours = load_exposure(exposure or data_path("exposure.tbl")).exposure(kind, speed)
        result = admissible_speeds(
            load_capability_table(capability),
            hours,
            load_risk_norms(norms or data_path("risk_norms.tbl")),
            _speed_list(speeds) if speeds else None,
        )
    reporter.table(
        f"Admissibility for {road}",
        ["Speed (km/h)", "Admissible", "Failing bands"],
        [
            (format_decimal(v.speed), "yes" if v.admissible else "no", ", ".join(b.label for b in v.failing))
            for v in result.verdicts
        ],
    )
    best = result.max_admissible
    line = f"max admissible speed: {format_decimal(best)} km/h" if best is not None else "no admissible speed"
    payload = result.to_dict()
    payload.pop("ok")
    _finish(reporter, CommandOutcome(ok=best is not None, payload=payload, lines=[line]))


@app.command("envelope")
def envelope_cmd(
    ctx: typer.Context,
    scenario: Optional[Path] = typer.Option(None, "--scenario", help=SCENARIO_HELP),
    grid: Optional[str] = typer.Option(None, "--grid", help=GRID_HELP),
    every: int = typer.Option(20, "--every", min=1, help="Show every n-th cell"),
):
    """Largest certified speed per distance cell."""
    reporter: Reporter = ctx.obj["reporter"]
    config: Config = ctx.obj["config"]
    with _inputs(reporter):
        params, g = load_setup(_scenario(scenario), config, grid)
        env = compute_safe_envelope(params, g)
    reporter.table(
        "Safe envelope",
        ["Distance (mm)", "Max speed (mm/s)"],
        [(g.distance(i), env.speeds[i]) for i in range(0, g.cell_count, every)],
    )
    _finish(reporter, CommandOutcome(ok=True, payload=env.to_dict()))


@app.command("verify")
def verify_cmd(
    ctx: typer.Context,
    out: Path = typer.Option(..., "--out", help="Certificate to write on success"),
    scenario: Optional[Path] = typer.Option(None, "--scenario", help=SCENARIO_HELP),
    grid: Optional[str] = typer.Option(None, "--grid", help=GRID_HELP),
    variant: str = typer.Option("nominal", "--variant", help=VARIANT_HELP),
    horizon: Optional[int] = typer.Option(None, "--horizon", min=1, help="Counterexample search depth"),
    trace_out: Optional[Path] = typer.Option(None, "--trace-out", help="Write a counterexample here"),
):
    """Prove the closed loop collision-free, or find a counterexample."""
    reporter: Reporter = ctx.obj["reporter"]
    config: Config = ctx.obj["config"]
    controller = _variant(variant, config)
    with _inputs(reporter):
        params, g = load_setup(_scenario(scenario), config, grid)
        logger.info("grid %s, %d cells", g.to_dict(), g.cell_count)
        result = verify_closed_loop(
            params,
            g,
            controller,
            horizon=horizon or config.horizon,
            jobs=config.jobs,
            producer=config.producer,
            reporter=reporter,
        )
        if isinstance(result, Certificate):
            write_certificate(out, result)
        elif isinstance(result, Counterexample) and trace_out is not None:
            trace_out.parent.mkdir(parents=True, exist_ok=True)
            trace_out.write_text(json.dumps(result.to_dict(), indent=2) + "\n", encoding="utf-8")

    if isinstance(result, Certificate):
        payload = {
            "kind": "certificate",
            "path": str(out),
            "digest": result.digest,
            "cells": len(result.speeds),
        }
        lines = [f"Valid: wrote {out} ({len(result.speeds)} cells, digest {result.digest[:16]})"]
        _finish(reporter, CommandOutcome(ok=True, payload=payload, lines=lines))
        return
    if isinstance(result, Counterexample):
        reporter.error(
            f"counterexample: collision at step {result.step} from {result.initial.v} mm/s, "
            f"impact {result.impact_speed} mm/s"
        )
    else:
        assert isinstance(result, NotProvable)
        reporter.error(f"{result.reason}: {len(result.failures)} closure failures, no collision found")
    payload = result.to_dict()
    payload.pop("ok")
    if trace_out is not None and isinstance(result, Counterexample):
        payload["trace"] = str(trace_out)
    _finish(reporter, CommandOutcome(ok=False, payload=payload))


@app.command("check-cert")
def check_cert_cmd(
    ctx: typer.Context,
    certificate: Path = typer.Argument(..., help=".cert file"),
    scenario: Optional[Path] = typer.Option(None, "--scenario", help=SCENARIO_HELP),
):
    """Independently re-check a proof certificate."""
    reporter: Reporter = ctx.obj["reporter"]
    config: Config = ctx.obj["config"]
    with _inputs(reporter):
        params = load_scenario(_scenario(scenario)).params
        data = certificate.read_bytes()
    try:
        cert = decode(data)
    except CertificateDecodeError as exc:
        reporter.error(f"{certificate}: {exc}")
        _finish(reporter, CommandOutcome(ok=False, payload={"reason": "DECODE", "detail": str(exc)}))
        return

    with reporter.progress("Checking certificate") as progress:
        task = progress.add_task("check", total=None)
        verdict = check_certificate(
            cert, params, jobs=config.jobs, on_cell=lambda _: progress.advance(task, 1)
        )
    if not verdict.valid:
        reporter.error(str(verdict))
    payload = verdict.to_dict()
    payload.pop("ok")
    _finish(reporter, CommandOutcome(ok=verdict.valid, payload=payload, lines=[str(verdict)]))


@app.command("replay")
def replay_cmd(
    ctx: typer.Context,
    trace: Path = typer.Argument(..., help="Counterexample JSON written by verify --trace-out"),
    scenario: Optional[Path] = typer.Option(None, "--scenario", help=SCENARIO_HELP),
    variant: Optional[str] = typer.Option(None, "--variant", help="Override the recorded controller"),
):
    """Re-simulate a counterexample and confirm the collision step."""
    reporter: Reporter = ctx.obj["reporter"]
    controller = _variant(variant, ctx.obj["config"]) if variant else None
    with _inputs(reporter):
        params = load_scenario(_scenario(scenario)).params
        try:
            data = json.loads(trace.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise QrnDomainError(f"{trace}: not JSON: {exc}") from exc
        recorded = Counterexample.from_dict(data)
        outcome = replay_trace(recorded, params, controller)
    reproduced = outcome.collided and outcome.step == recorded.step
    if outcome.collided:
        line = f"collision at step {outcome.step}, impact {outcome.impact_speed} mm/s"
    else:
        line = f"no collision within {len(recorded.disturbances)} steps"
    if not reproduced:
        reporter.error(f"trace does not reproduce: recorded step {recorded.step}, {line}")
    payload = {
        "reproduced": reproduced,
        "collided": outcome.collided,
        "step": outcome.step,
        "impact_speed_mm_s": outcome.impact_speed,
    }
    _finish(reporter, CommandOutcome(ok=reproduced, payload=payload, lines=[line]))


@app.command("capability")
def capability_cmd(
    ctx: typer.Context,
    incidents: Path = typer.Option(..., "--incidents", help="Incident model (.tbl)"),
    speeds: str = typer.Option(..., "--speeds", help="Comma-separated initial speeds in km/h"),
    scenario: Optional[Path] = typer.Option(None, "--scenario", help=SCENARIO_HELP),
    norms: Optional[Path] = typer.Option(None, "--norms", help="Risk norm table whose bands are used"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the table to a file"),
):
    """Impact-speed band probabilities per initial speed, as a capability table."""
    reporter: Reporter = ctx.obj["reporter"]
    config: Config = ctx.obj["config"]
    with _inputs(reporter):
        params = load_scenario(_scenario(scenario)).params
        bands = load_risk_norms(norms or data_path("risk_norms.tbl"))
        model = load_incident_model(incidents)
        table = capability_table(params, _speed_list(speeds), model, bands, config.jobs)
        text = render_capability_table(table)
        if out is not None:
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(text, encoding="utf-8")
    if reporter.json_output:
        payload = {
            format_decimal(speed): {band.label: format_decimal(p) for band, p in table.entries[speed].items()}
            for speed in table.speeds
        }
        reporter.emit_json({"ok": True, "capability": payload})
    elif out is not None:
        reporter.info(f"Wrote {out}")
    else:
        reporter.write(text)


@config_app.command("init")
def config_init(
    path: Optional[Path] = typer.Argument(None),
    force: bool = typer.Option(False, "--force", help="Overwrite an existing file"),
):
    """Create a default config file."""
    target = path or default_config_path()
    if target.exists() and not force:
        typer.echo(f"{target} exists; pass --force to overwrite", err=True)
        raise typer.Exit(code=ExitCode.USAGE)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(config_default_toml(), encoding="utf-8")
    typer.echo(f"Wrote {target}")


@config_app.command("show")
def config_show(ctx: typer.Context):
    """Print the effective configuration."""
    reporter: Reporter = ctx.obj["reporter"]
    config: Config = ctx.obj["config"]
    if reporter.json_output:
        reporter.emit_json({"ok": True, "path": str(ctx.obj["config_path"]), **vars(config)})
        return
    reporter.write(config_to_toml(config))


def _dispatch(argv: Sequence[str] | None) -> int:
    try:
        app(args=None if argv is None else list(argv), prog_name="safecase")
    except SystemExit as exc:
        if exc.code is None:
            return ExitCode.OK
        return exc.code if isinstance(exc.code, int) else ExitCode.VERDICT_FAILED
    except Exception as exc:  # noqa: BLE001
        logger.debug("unhandled error", exc_info=True)
        sys.stderr.write(f"internal error: {exc}\n")
        return ExitCode.INTERNAL
    return ExitCode.OK


def run(argv: Sequence[str]) -> CommandOutcome:
    """Run one invocation in-process, capturing stdout and stderr."""
    out, err = StringIO(), StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = _dispatch(argv)
    return CommandOutcome(
        ok=code == ExitCode.OK, code=ExitCode(code), stdout=out.getvalue(), stderr=err.getvalue()
    )


def app_main():
    sys.exit(_dispatch(None))


if __name__ == "__main__":
    app_main()
