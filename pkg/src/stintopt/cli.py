"""Run configuration and the five command-line entry points.

Each command loads one JSON run configuration, executes the matching
pipeline stage and writes flat files into the output directory.  Outputs
carry the hash of the resolved configuration plus the seed, so any file
can be traced back to the exact run that produced it; nothing in the
files depends on wall-clock time.

Exit codes: 0 on success, 1 on a runtime failure (bad config, aborted
stint), 2 on an infeasible optimization problem.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import click
import numpy as np

from .controller import ControllerConfig
from .errors import ConfigError, InfeasibleProblemError, StintOptError
from .harness import (
    ChargeModel,
    DisturbanceScenario,
    StintLog,
    run_closed_loop,
    sweep_strategy,
)
from .liftcoast import CoastPlan, ThrottleMap, default_maps, fit_coast_thresholds
from .model import VehicleParams, VehicleState, load_params_json
from .socp import PlanSolution, StintBoundary, build_problem, solve
from .track import GripState, TrackProfile, build_grid, load_track_csv

_BOUNDARY_DEFAULTS = {
    "s0": 0.0,
    "v0": 25.0,
    "E_b0_frac": 0.98,
    "theta_m0": 320.0,
    "theta_b0": 308.0,
}


@dataclass(frozen=True)
class RunConfig:
    """One resolved run configuration.

    ``boundary`` must carry ``n_laps`` and exactly one of ``t_charge``
    (stint targets derived from the recharge model) or an explicit
    ``E_b_target``.  Paths are resolved against the config file location.
    """

    track_csv: Path
    vehicle_json: Path
    boundary: dict
    maps: list[dict] | None
    controller: dict
    scenario: str | dict | None
    charge: dict
    sweep: dict | None
    out_dir: Path
    seed: int
    resolved: dict  # canonical dict the hash is computed over

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.resolved, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(
    path,
    out: str | None = None,
    seed: int | None = None,
    variant: str | None = None,
    scenario: str | None = None,
) -> RunConfig:
    """Read, override, validate and resolve a run configuration file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")

    if out is not None:
        raw["out_dir"] = out
    if seed is not None:
        raw["seed"] = seed
    if variant is not None:
        raw.setdefault("controller", {})
        raw["controller"] = {**raw["controller"], "variant": variant}
    if scenario is not None:
        raw["scenario"] = scenario

    for key in ("track_csv", "vehicle_json", "boundary", "out_dir"):
        if key not in raw:
            raise ConfigError(f"config is missing required key {key!r}")

    base = path.parent
    track_csv = (base / raw["track_csv"]).resolve()
    vehicle_json = (base / raw["vehicle_json"]).resolve()
    for p in (track_csv, vehicle_json):
        if not p.is_file():
            raise ConfigError(f"referenced file does not exist: {p}")

    boundary = {**_BOUNDARY_DEFAULTS, **raw["boundary"]}
    n_laps = boundary.get("n_laps")
    if not isinstance(n_laps, int) or n_laps < 1:
        raise ConfigError("boundary.n_laps must be an integer >= 1")
    has_charge = boundary.get("t_charge") is not None
    has_target = boundary.get("E_b_target") is not None
    if has_charge == has_target:
        raise ConfigError(
            "boundary must set exactly one of t_charge / E_b_target")

    resolved = {
        "track_csv": str(track_csv),
        "vehicle_json": str(vehicle_json),
        "boundary": boundary,
        "maps": raw.get("maps"),
        "controller": raw.get("controller", {}),
        "scenario": raw.get("scenario"),
        "charge": raw.get("charge", {}),
        "sweep": raw.get("sweep"),
        "seed": int(raw.get("seed", 0)),
    }
    return RunConfig(
        track_csv=track_csv,
        vehicle_json=vehicle_json,
        boundary=boundary,
        maps=raw.get("maps"),
        controller=raw.get("controller", {}),
        scenario=raw.get("scenario"),
        charge=raw.get("charge", {}),
        sweep=raw.get("sweep"),
        out_dir=Path(raw["out_dir"]),
        seed=int(raw.get("seed", 0)),
        resolved=resolved,
    )


def parse_scenario(spec) -> DisturbanceScenario:
    """Build a scenario from its config form (name string or object)."""
    if spec is None:
        return DisturbanceScenario.none()
    if isinstance(spec, str):
        try:
            return DisturbanceScenario(kind=spec)
        except ValueError as err:
            raise ConfigError(f"unknown scenario {spec!r}") from err
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("scenario object must carry a 'kind' field")
    fields = dict(spec)
    kind = fields.pop("kind")
    if kind == "composite":
        parts = [parse_scenario(p) for p in fields.pop("parts", [])]
        return DisturbanceScenario.composite(*parts)
    if "window" in fields and fields["window"] is not None:
        fields["window"] = tuple(fields["window"])
    try:
        return DisturbanceScenario(kind=kind, **fields)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad scenario spec: {err}") from err


def _charge_model(cfg: RunConfig) -> ChargeModel:
    return ChargeModel(**cfg.charge) if cfg.charge else ChargeModel()


def _build_boundary(cfg: RunConfig, track: TrackProfile,
                    params: VehicleParams) -> StintBoundary:
    b = cfg.boundary
    e_b0 = b.get("E_b0", b["E_b0_frac"] * params.E_b_max)
    x0 = VehicleState(0.5 * params.m_eq * b["v0"] ** 2, e_b0,
                      b["theta_m0"], b["theta_b0"])
    if b.get("t_charge") is not None:
        e_tgt, th_tgt = _charge_model(cfg).targets(b["t_charge"], params, e_b0)
    else:
        e_tgt = b["E_b_target"]
        th_tgt = b.get("theta_b_target", params.theta_b_max)
    return StintBoundary(b["s0"], b["n_laps"] * track.s_lap, x0, e_tgt, th_tgt)


def _build_maps(cfg: RunConfig, params: VehicleParams) -> list[ThrottleMap]:
    if not cfg.maps:
        return default_maps(params)
    return [ThrottleMap(int(m["id"]), float(m["P_full"])) for m in cfg.maps]


@dataclass(frozen=True)
class _Bundle:
    track: TrackProfile
    params: VehicleParams
    boundary: StintBoundary
    maps: list[ThrottleMap]
    grip: GripState


def _load_bundle(cfg: RunConfig) -> _Bundle:
    track = load_track_csv(cfg.track_csv)
    params = load_params_json(cfg.vehicle_json)
    return _Bundle(track, params, _build_boundary(cfg, track, params),
                   _build_maps(cfg, params), GripState(1.0, 1.0, None))


def _solve_plan(bundle: _Bundle) -> PlanSolution:
    grid = build_grid(bundle.track, bundle.boundary.s0,
                      bundle.boundary.S_stint, mode="optimizer")
    return solve(build_problem(bundle.track, bundle.params, bundle.grip,
                               bundle.boundary, grid))


def _solve_coast(bundle: _Bundle, plan: PlanSolution) -> CoastPlan:
    return fit_coast_thresholds(plan, bundle.maps, bundle.boundary, bundle.track,
                          bundle.params, bundle.grip)


def _json_safe(value):
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, (np.floating, float)):
        return None if not math.isfinite(value) else float(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _emit_json(cfg: RunConfig, name: str, payload: dict) -> Path:
    out = cfg.out_dir / name
    body = {"config_hash": cfg.config_hash, "seed": cfg.seed,
            **_json_safe(payload)}
    out.write_text(json.dumps(body, sort_keys=True, indent=2) + "\n")
    return out


def _emit_csv(cfg: RunConfig, name: str, header: list[str],
              columns: list[np.ndarray]) -> Path:
    out = cfg.out_dir / name
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(x)) for x in row])
    return out


def _prepare_out(cfg: RunConfig) -> None:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    body = dict(cfg.resolved)
    body["config_hash"] = cfg.config_hash
    (cfg.out_dir / "config_resolved.json").write_text(
        json.dumps(body, sort_keys=True, indent=2) + "\n")


def cmd_optimize(cfg: RunConfig) -> Path:
    """Solve the convex stint plan and write its node and plot files."""
    bundle = _load_bundle(cfg)
    _prepare_out(cfg)
    plan = _solve_plan(bundle)
    s = plan.grid.nodes
    _emit_json(cfg, "plan.json", {
        "status": plan.status,
        "t_pred": plan.t_pred,
        "tight_fraction": plan.tight_fraction,
        "tightness_warning": plan.tightness_warning,
        "n_nodes": len(s),
    })
    _emit_csv(cfg, "plan_nodes.csv",
              ["s", "E_kin", "v", "E_b", "theta_m", "theta_b",
               "F_m", "F_brake", "F_dc", "lambda_kin"],
              [s, plan.E_kin, plan.v, plan.E_b, plan.theta_m, plan.theta_b,
               plan.F_m, plan.F_brake, plan.F_dc, plan.lambda_kin])
    return _emit_csv(cfg, "plan_plot.csv",
                     ["s", "P_mech", "P_elec", "E_kin", "E_b",
                      "theta_m", "theta_b", "lambda_kin"],
                     [s, plan.F_m * plan.v, plan.F_dc * plan.v, plan.E_kin,
                      plan.E_b, plan.theta_m, plan.theta_b, plan.lambda_kin])


def cmd_adapt(cfg: RunConfig) -> Path:
    """Fit coast thresholds for every throttle map and write them."""
    bundle = _load_bundle(cfg)
    _prepare_out(cfg)
    plan = _solve_plan(bundle)
    coast = _solve_coast(bundle, plan)
    best = coast.best()
    _emit_csv(cfg, "coast_nodes.csv", ["s", "lambda_kin"],
              [coast.grid.nodes, coast.lambda_kin])
    return _emit_json(cfg, "adapt.json", {
        "best_map": best.id,
        "best_cost": best.cost,
        "maps": [{
            "id": m.id,
            "P_full": m.P_full,
            "lambda_star": m.lambda_star,
            "cost": m.cost,
            "feasible": m.feasible,
            "iterations": m.iterations,
            "simulations": m.simulations,
            "witness_feasible": m.witness_feasible,
            "witness_infeasible": m.witness_infeasible,
        } for m in coast.maps],
    })


def cmd_simulate(cfg: RunConfig) -> StintLog:
    """Run the closed loop under the configured scenario and variant."""
    bundle = _load_bundle(cfg)
    _prepare_out(cfg)
    plan = _solve_plan(bundle)
    coast = _solve_coast(bundle, plan)
    ctl_cfg = ControllerConfig(**cfg.controller)
    scen = parse_scenario(cfg.scenario)
    log = run_closed_loop(ctl_cfg, scen, bundle.boundary, bundle.track,
                          bundle.params, seed=cfg.seed, plan=plan,
                          coast=coast)
    log.to_csv(cfg.out_dir / "telemetry.csv")
    _emit_json(cfg, "metrics.json", {
        **log.metrics,
        "laps": log.lap_summaries(),
        "adapt_cost": coast.best().cost,
    })
    return log


def cmd_sweep(cfg: RunConfig) -> list[dict]:
    """Evaluate the stint-length / charge-time grid and write the table."""
    if not cfg.sweep:
        raise ConfigError("config has no 'sweep' section")
    bundle = _load_bundle(cfg)
    _prepare_out(cfg)
    rows = sweep_strategy(
        [int(n) for n in cfg.sweep["stint_laps"]],
        [float(t) for t in cfg.sweep["charge_times"]],
        _charge_model(cfg), bundle.boundary.x0, bundle.track, bundle.params,
        maps=bundle.maps)
    _emit_json(cfg, "sweep.json", {"rows": rows})
    out = cfg.out_dir / "sweep.csv"
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for row in rows:
            w.writerow(_json_safe(row))
    return rows


_CONFIG = click.option("--config", "config_path", required=True,
                       type=click.Path(exists=True, dir_okay=False),
                       help="Run configuration JSON.")
_OUT = click.option("--out", default=None, help="Override output directory.")
_SEED = click.option("--seed", default=None, type=int, help="Override seed.")


def _run(fn, *args) -> None:
    try:
        fn(*args)
    except InfeasibleProblemError as err:
        click.echo(f"infeasible: {err}", err=True)
        raise SystemExit(2)
    except StintOptError as err:
        click.echo(f"error: {err}", err=True)
        raise SystemExit(1)


@click.group()
def main() -> None:
    """Stint-time-minimizing energy and thermal management toolkit."""


@main.command()
@_CONFIG
@_OUT
@_SEED
def optimize(config_path, out, seed) -> None:
    """Solve the stint plan and write plan.json plus node/plot CSVs."""
    _run(lambda: cmd_optimize(load_config(config_path, out, seed)))


@main.command()
@_CONFIG
@_OUT
@_SEED
def adapt(config_path, out, seed) -> None:
    """Fit per-map coast thresholds and write adapt.json."""
    _run(lambda: cmd_adapt(load_config(config_path, out, seed)))


@main.command()
@_CONFIG
@_OUT
@_SEED
@click.option("--variant", default=None,
              type=click.Choice(["fully_online", "fixed_costate",
                                 "fixed_costate_and_threshold"]),
              help="Override the controller variant.")
@click.option("--scenario", default=None,
              type=click.Choice(["none", "drafting", "tire_degradation",
                                 "full_course_yellow"]),
              help="Override the disturbance scenario.")
def simulate(config_path, out, seed, variant, scenario) -> None:
    """Run the closed loop and write telemetry.csv plus metrics.json."""
    def body():
        cfg = load_config(config_path, out, seed, variant, scenario)
        log = cmd_simulate(cfg)
        if log.aborted_at is not None:
            click.echo("aborted: " + "; ".join(log.violations), err=True)
            raise SystemExit(1)

    _run(body)


@main.command()
@_CONFIG
@_OUT
@_SEED
def sweep(config_path, out, seed) -> None:
    """Evaluate the recharge strategy grid and write sweep.csv."""
    _run(lambda: cmd_sweep(load_config(config_path, out, seed)))


@main.command()
@_CONFIG
@click.option("--port", default=8700, type=int, help="WebSocket port.")
@click.option("--timescale", default=5.0, type=float,
              help="Simulated seconds per wall-clock second.")
def serve(config_path, port, timescale) -> None:
    """Serve a live closed-loop session over a JSON-lines WebSocket."""
    from .serve import run_server

    _run(lambda: run_server(load_config(config_path), port, timescale))


if __name__ == "__main__":
    main()
