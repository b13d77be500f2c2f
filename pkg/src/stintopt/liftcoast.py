"""Throttle maps, the full-throttle-or-coast simulation and the threshold
bisection that turns a relaxed plan into a drivable strategy.

A throttle map pins full throttle to a fixed power, so the only remaining
driver instruction is where to lift.  Lifting is decided by comparing the
robustified kinetic co-state against a scalar threshold: coast wherever
lambda_kin >= lambda_c (time there is cheap relative to energy).  The
bisection pushes the threshold as high as the stint constraints allow,
which recovers the energy target with the least possible time loss.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import InfeasibleProblemError, ParamError
from .model import VehicleParams, braking_envelope
from .socp import PlanSolution, StintBoundary, robustify_costate
from .track import (
    G,
    GripState,
    Grid,
    TrackProfile,
    build_grid,
    grade_at,
    max_kinetic_energy_arrays,
)

DEFAULT_TOL_FRACTION = 1e-4  # of the initial threshold bracket width


@dataclass(frozen=True)
class ThrottleMap:
    """Discrete driver mode: full throttle equals a fixed power P_full."""

    id: int
    P_full: float  # [W]

    def __post_init__(self):
        if self.P_full <= 0:
            raise ParamError("P_full must be positive")


def throttle_force(tmap: ThrottleMap, u_th, E_kin, params: VehicleParams):
    """Wheel force for a throttle position under a map, F = u*min(F_max, P/v)."""
    E_kin = np.asarray(E_kin, dtype=float)
    if np.any(E_kin <= 0):
        raise ParamError("E_kin must be positive")
    v = np.sqrt(2.0 * E_kin / params.m_eq)
    return u_th * np.minimum(params.F_m_max, tmap.P_full / v)


@dataclass
class SimContext:
    """Shared precomputed per-node arrays for repeated stint simulations."""

    grid: Grid
    lam: np.ndarray        # robustified co-state on the 1 m grid
    env: np.ndarray        # braking envelope [J]
    e_kin_max: np.ndarray  # grip bound [J]
    c_a: np.ndarray        # aero drag coefficient per node [1/m]
    resist: np.ndarray     # rolling + grade force per node [N]


def build_sim_context(
    plan: PlanSolution,
    boundary: StintBoundary,
    track: TrackProfile,
    params: VehicleParams,
    grip: GripState,
    *,
    e_kin_max: np.ndarray | None = None,
    aero_scale_nodes: np.ndarray | None = None,
    lam: np.ndarray | None = None,
) -> SimContext:
    """Resample the robustified co-state onto the 1 m grid and precompute
    the physics arrays every simulation shares.

    ``e_kin_max``/``aero_scale_nodes`` override the uniform grip state with
    disturbed per-node profiles on the simulation grid; ``lam`` overrides
    the co-state (already robustified) if the caller edited it.
    """
    grid = build_grid(track, boundary.s0, boundary.S_stint, mode="simulation")
    if lam is None:
        lam_opt = robustify_costate(plan, track, plan.grid)
        lam = np.interp(grid.nodes, plan.grid.nodes, lam_opt)
    if aero_scale_nodes is None:
        aero_scale_nodes = np.full(len(grid.nodes), grip.aero_scale)
    if e_kin_max is None:
        cap = grip.v_cap if grip.v_cap is not None else np.inf
        e_kin_max = max_kinetic_energy_arrays(
            track, params, grid, grip.mu_scale, aero_scale_nodes, cap
        )
    env = braking_envelope(
        track, grip, params, grid,
        e_kin_max=e_kin_max, aero_scale_nodes=aero_scale_nodes,
    )
    grade = grade_at(track, grid.nodes)
    c_a = np.asarray(aero_scale_nodes, float) * params.rho_cd_A / params.m_eq
    resist = params.c_r * params.m * G * np.cos(grade) + params.m * G * np.sin(grade)
    return SimContext(
        grid=grid, lam=np.asarray(lam, float), env=env,
        e_kin_max=np.asarray(e_kin_max, float), c_a=c_a, resist=resist,
    )


@dataclass
class StintSim:
    """One simulated stint: trajectories, feasibility verdict and report."""

    t_stint: float
    constraints_ok: bool
    violations: list[str]
    grid: Grid
    E_kin: np.ndarray
    E_b: np.ndarray
    theta_m: np.ndarray
    theta_b: np.ndarray
    t: np.ndarray
    u_th: np.ndarray
    clamped: np.ndarray
    stalled_at: float | None = None


def simulate_stint(
    lambda_c: float,
    tmap: ThrottleMap,
    boundary: StintBoundary,
    track: TrackProfile,
    params: VehicleParams,
    grip: GripState,
    *,
    ctx: SimContext | None = None,
    plan: PlanSolution | None = None,
    v_coast_min: float = 0.0,
) -> StintSim:
    """March the stint at 1 m steps under the coast threshold ``lambda_c``.

    Nodes coast when the robustified co-state is >= the threshold (ties
    coast) and the driver would otherwise be flat-out; where full throttle
    would pierce the braking envelope the driver is grip-limited instead,
    and the inputs are recomputed to land exactly on the envelope.  This
    keeps corner arcs held at the grip bound rather than coasted, matching
    the closed-loop driver rule.
    """
    if tmap.P_full > params.P_max + 1e-9:
        raise ParamError(f"map {tmap.id}: P_full exceeds P_max")
    if ctx is None:
        if plan is None:
            raise ParamError("simulate_stint needs a SimContext or a PlanSolution")
        ctx = build_sim_context(plan, boundary, track, params, grip)

    n = len(ctx.grid.nodes)
    E_kin = np.empty(n)
    E_b = np.empty(n)
    th_m = np.empty(n)
    th_b = np.empty(n)
    t_arr = np.empty(n)
    u_th = np.empty(n)
    clamped = np.zeros(n, dtype=np.bool_)
    x0 = boundary.x0

    status, idx = _kernels.march(
        1.0, ctx.lam, ctx.env, ctx.c_a, ctx.resist,
        lambda_c, tmap.P_full, v_coast_min,
        params.m_eq, params.F_m_max, params.P_regen, params.F_brake_max,
        params.alpha_m, params.beta_m, params.alpha_b, params.P_aux,
        params.h_m, params.h_b, params.C_m, params.C_b, params.theta_cool,
        min(x0.E_kin, ctx.env[0]), x0.E_b, x0.theta_m, x0.theta_b, x0.t,
        E_kin, E_b, th_m, th_b, t_arr, u_th, clamped,
    )

    violations = []
    stalled_at = None
    if status == _kernels.MARCH_STALL:
        stalled_at = float(ctx.grid.nodes[idx])
        violations.append(f"vehicle stalled at s={stalled_at:.0f} m")
        last = max(idx, 1)
        return StintSim(
            t_stint=math.inf, constraints_ok=False, violations=violations,
            grid=ctx.grid, E_kin=E_kin[:last], E_b=E_b[:last],
            theta_m=th_m[:last], theta_b=th_b[:last], t=t_arr[:last],
            u_th=u_th[:last], clamped=clamped[:last], stalled_at=stalled_at,
        )
    if status == _kernels.MARCH_BRAKING:
        raise InfeasibleProblemError(
            "vehicle dynamics",
            f"braking capability exceeded at s={ctx.grid.nodes[idx]:.0f} m",
        )

    if E_b.min() < params.E_b_min - 1e-6:
        violations.append("battery energy floor violated")
    if E_b[-1] < boundary.E_b_target - 1e-6:
        violations.append("terminal battery energy below target")
    if th_m.max() > params.theta_m_max + 1e-9:
        violations.append("motor temperature limit exceeded")
    if th_b.max() > params.theta_b_max + 1e-9:
        violations.append("battery temperature limit exceeded")
    if th_b[-1] > boundary.theta_b_target + 1e-9:
        violations.append("terminal battery temperature above target")

    return StintSim(
        t_stint=float(t_arr[-1] - t_arr[0]),
        constraints_ok=not violations,
        violations=violations,
        grid=ctx.grid,
        E_kin=E_kin, E_b=E_b, theta_m=th_m, theta_b=th_b, t=t_arr,
        u_th=u_th, clamped=clamped,
    )


PROBE_OK = 0
PROBE_TOO_HIGH = 1  # constraints violated: threshold must come down
PROBE_TOO_LOW = 2   # over-coasting failure (stall): threshold must go up


def bisect_on(probe, lo: float, hi: float, tol: float):
    """Generic bisection for the largest threshold the probe accepts.

    ``probe(x)`` returns PROBE_OK, PROBE_TOO_HIGH (energy or thermal
    constraints violated, so x must decrease) or PROBE_TOO_LOW (the
    simulated vehicle stalled from over-coasting, so x must increase).
    Feasibility is monotone in x except for the stall mode at the very
    bottom of the bracket, which the directional verdict handles without
    extra probes.

    Returns (best_feasible_x, iterations, evaluations); iterations counts
    only midpoint probes.  The upper endpoint is tried first (0 iterations
    when no restriction is needed); the lower endpoint is probed only when
    every midpoint failed.  best_feasible_x is None when nothing passed.
    """
    evals = 1
    if probe(hi) == PROBE_OK:
        return hi, 0, evals
    best = None
    iterations = 0
    lo_b, hi_b = lo, hi
    while hi_b - lo_b > tol:
        mid = (lo_b + hi_b) / 2.0
        evals += 1
        iterations += 1
        verdict = probe(mid)
        if verdict == PROBE_OK:
            best = mid
            lo_b = mid
        elif verdict == PROBE_TOO_HIGH:
            hi_b = mid
        else:
            lo_b = mid
    if best is None:
        evals += 1
        if probe(lo) == PROBE_OK:
            best = lo
    return best, iterations, evals


@dataclass
class MapResult:
    """Per-map outcome of the threshold bisection."""

    id: int
    P_full: float
    lambda_star: float
    cost: float
    feasible: bool
    iterations: int
    simulations: int
    sim: StintSim | None = None
    # bracketing witness: re-simulating these must stay (in)feasible
    witness_feasible: float | None = None
    witness_infeasible: float | None = None


def bisect_threshold(
    tmap: ThrottleMap,
    boundary: StintBoundary,
    track: TrackProfile,
    params: VehicleParams,
    grip: GripState,
    ctx: SimContext,
    tol: float | None = None,
    v_coast_min: float = 0.0,
) -> MapResult:
    """Push the coast threshold as high as the constraints allow.

    The bracket is [min, max] of the robustified co-state.  ``tol`` is an
    absolute threshold width; by default 1e-4 of the bracket.
    """
    lam_lo = float(ctx.lam.min())
    lam_hi = float(ctx.lam.max())
    bracket = lam_hi - lam_lo
    if bracket <= 0:  # constant co-state: single candidate
        lam_lo -= 1e-16
        bracket = lam_hi - lam_lo
    if tol is None:
        tol = DEFAULT_TOL_FRACTION * bracket

    cache: dict[float, StintSim] = {}

    def probe(lc: float) -> int:
        res = simulate_stint(
            lc, tmap, boundary, track, params, grip, ctx=ctx,
            v_coast_min=v_coast_min,
        )
        cache[lc] = res
        if res.constraints_ok:
            return PROBE_OK
        return PROBE_TOO_LOW if res.stalled_at is not None else PROBE_TOO_HIGH

    best, iterations, evals = bisect_on(probe, lam_lo, lam_hi, tol)
    if best is None:
        worst = cache.get(lam_lo) or next(iter(cache.values()))
        return MapResult(
            id=tmap.id, P_full=tmap.P_full, lambda_star=math.nan,
            cost=math.inf, feasible=False, iterations=iterations,
            simulations=evals, sim=worst,
        )
    accepted = cache[best]
    infeasible_probes = [x for x in cache if not cache[x].constraints_ok and x > best]
    witness_bad = min(infeasible_probes) if infeasible_probes else None
    return MapResult(
        id=tmap.id, P_full=tmap.P_full, lambda_star=best,
        cost=accepted.t_stint, feasible=True, iterations=iterations,
        simulations=evals, sim=accepted,
        witness_feasible=best, witness_infeasible=witness_bad,
    )


@dataclass
class CoastPlan:
    """Driver-ready strategy: one threshold per throttle map."""

    lambda_kin: np.ndarray  # robustified, on the 1 m simulation grid
    grid: Grid
    maps: list[MapResult] = field(default_factory=list)

    def best(self) -> MapResult:
        feasible = [m for m in self.maps if m.feasible]
        if not feasible:
            raise InfeasibleProblemError(
                "coast feasibility",
                "no throttle map admits a feasible coasting strategy; "
                "relax the energy or thermal targets",
            )
        return min(feasible, key=lambda m: m.cost)

    def to_dict(self) -> dict:
        return {
            "lambda_kin": self.lambda_kin.tolist(),
            "maps": [
                {
                    "id": m.id,
                    "P_full": m.P_full,
                    "lambda_star": None if math.isnan(m.lambda_star) else m.lambda_star,
                    "cost": None if math.isinf(m.cost) else m.cost,
                    "feasible": m.feasible,
                }
                for m in self.maps
            ],
        }

    def dump_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)
            f.write("\n")


def fit_coast_thresholds(
    plan: PlanSolution,
    maps: list[ThrottleMap],
    boundary: StintBoundary,
    track: TrackProfile,
    params: VehicleParams,
    grip: GripState,
    *,
    ctx: SimContext | None = None,
    tol: float | None = None,
    v_coast_min: float = 0.0,
) -> CoastPlan:
    """Bisect the coast threshold for every throttle map.

    Raises when no map is feasible; otherwise infeasible maps are carried
    in the result with their flag cleared.
    """
    if not maps:
        raise ParamError("need at least one throttle map")
    for tmap in maps:
        if tmap.P_full > params.P_max + 1e-9:
            raise ParamError(f"map {tmap.id}: P_full exceeds P_max")
    if ctx is None:
        ctx = build_sim_context(plan, boundary, track, params, grip)
    results = [
        bisect_threshold(
            tmap, boundary, track, params, grip, ctx,
            tol=tol, v_coast_min=v_coast_min,
        )
        for tmap in maps
    ]
    coast = CoastPlan(lambda_kin=ctx.lam, grid=ctx.grid, maps=results)
    coast.best()  # raises the structured all-infeasible error
    return coast


def default_maps(params: VehicleParams) -> list[ThrottleMap]:
    """Three maps spanning full power down to a 4% derate."""
    return [
        ThrottleMap(id=i, P_full=frac * params.P_max)
        for i, frac in enumerate((1.0, 0.98, 0.96), start=1)
    ]
