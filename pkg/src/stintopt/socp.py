"""Convex stint-time minimization as a second-order cone program.

The planner minimizes the integral of lethargy (dt/ds, the inverse of
speed) over the remaining stint distance subject to the powertrain, battery,
thermal and grip constraints of :mod:`stintopt.model`.  Two standard
relaxations make the problem conic: an auxiliary speed variable v with
v^2 <= 2 E_kin / m_eq, and the hyperbolic cone ell * v >= 1.  Both are tight
at the optimum wherever lethargy drives the objective; tightness residuals
are checked after every solve.

The dual variables of the kinetic-energy dynamics equalities are exposed as
the kinetic co-state lambda_kin(s) <= 0: the sensitivity of total stint time
to kinetic energy injected at s.  They are normalized per meter so threshold
values are independent of the local grid step, and robustified by flattening
each span from a corner apex to the following co-state minimum.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .errors import InfeasibleProblemError, ParamError
from .model import VehicleParams, VehicleState
from .track import G, GripState, Grid, TrackProfile, grade_at, max_kinetic_energy_arrays

V_FLOOR = 3.0  # [m/s] numerical guard against the lethargy singularity

SOLVER = "CLARABEL"


@dataclass(frozen=True)
class StintBoundary:
    """Horizon endpoints, measured initial state and terminal targets."""

    s0: float
    S_stint: float
    x0: VehicleState
    E_b_target: float
    theta_b_target: float

    def __post_init__(self):
        if not self.s0 < self.S_stint:
            raise ParamError("s0 must lie before S_stint")
        if self.x0.E_kin <= 0:
            raise ParamError("initial kinetic energy must be positive")


@dataclass
class PlanSolution:
    """Optimal trajectories, the kinetic co-state and the predicted time."""

    grid: Grid
    E_kin: np.ndarray
    v: np.ndarray
    lethargy: np.ndarray
    F_m: np.ndarray
    F_brake: np.ndarray
    F_loss_m: np.ndarray
    F_dc: np.ndarray
    F_loss_b: np.ndarray
    E_b: np.ndarray
    theta_m: np.ndarray
    theta_b: np.ndarray
    lambda_kin: np.ndarray       # per-node, per-meter normalized, <= 0
    t_pred: float
    status: str
    tightness_hyperbolic: float  # max relative residual of ell*v >= 1
    tightness_speed: float       # max relative residual of v^2 <= 2 E_kin/m_eq
    tight_fraction: float        # share of nodes with both residuals <= 1e-4
    tightness_warning: bool
    solve_seconds: float

    _ARRAY_FIELDS = (
        "E_kin", "v", "lethargy", "F_m", "F_brake", "F_loss_m", "F_dc",
        "F_loss_b", "E_b", "theta_m", "theta_b", "lambda_kin",
    )

    def to_dict(self) -> dict:
        out = {name: np.asarray(getattr(self, name)).tolist() for name in self._ARRAY_FIELDS}
        out["grid"] = self.grid.nodes.tolist()
        out["t_pred"] = self.t_pred
        out["status"] = self.status
        out["tightness"] = {
            "hyperbolic_max": self.tightness_hyperbolic,
            "speed_max": self.tightness_speed,
            "tight_fraction": self.tight_fraction,
            "warning": self.tightness_warning,
        }
        return out

    def dump_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)
            f.write("\n")


# Per-quantity variable scales.  Interior-point solvers stall when decision
# variables span ten orders of magnitude (battery Joules vs lethargy), so the
# program is assembled in these units and results are converted back.
S_EKIN = 1e6   # [J]
S_EB = 1e7     # [J]
S_F = 1e4      # [N]
S_ELL = 0.1    # [s/m]
S_V = 10.0     # [m/s]


@dataclass
class ConicProblem:
    """A built (unsolved) planning problem plus hooks for dual extraction."""

    problem: cp.Problem
    variables: dict       # scaled cvxpy variables
    scales: dict          # variable name -> physical unit per scaled unit
    constraints: dict
    counts: dict
    grid: Grid
    boundary: StintBoundary
    params: VehicleParams
    e_kin_max: np.ndarray
    c_a_nodes: np.ndarray
    resist_nodes: np.ndarray
    lethargy_ref: np.ndarray
    context: dict = field(default_factory=dict)


def default_lethargy_ref(params: VehicleParams, n_nodes: int) -> np.ndarray:
    """Constant-speed cooling reference at two thirds of the straight cap."""
    return np.full(n_nodes, 1.0 / (2.0 / 3.0 * params.v_max_straight))


def build_problem(
    track: TrackProfile,
    params: VehicleParams,
    grip: GripState,
    boundary: StintBoundary,
    grid: Grid,
    lethargy_ref: np.ndarray | None = None,
    *,
    e_kin_max: np.ndarray | None = None,
    aero_scale_nodes: np.ndarray | None = None,
) -> ConicProblem:
    """Assemble the conic program on the given optimizer grid.

    ``e_kin_max`` and ``aero_scale_nodes`` override the uniform grip state
    with per-node disturbed profiles (used by the a-priori oracle).  The
    thermal cooling terms use the frozen ``lethargy_ref`` instead of the
    lethargy decision variable to stay linear.

    Scalar constraint counts for N intervals (N+1 nodes): 11(N+1)
    variables, 5N+5 equality rows, 4(N+1) cone memberships and
    12(N+1)+2 inequality rows.
    """
    nodes = grid.nodes
    n = len(nodes)
    if abs(nodes[0] - boundary.s0) > 1e-6 or abs(nodes[-1] - boundary.S_stint) > 1e-6:
        raise ParamError("grid does not span the boundary horizon")
    if lethargy_ref is None:
        lethargy_ref = default_lethargy_ref(params, n)
    lethargy_ref = np.asarray(lethargy_ref, dtype=float)
    if lethargy_ref.shape != nodes.shape or np.any(lethargy_ref <= 0):
        raise ParamError("lethargy_ref must be positive per node")

    if aero_scale_nodes is None:
        aero_scale_nodes = np.full(n, grip.aero_scale)
    aero_scale_nodes = np.asarray(aero_scale_nodes, dtype=float)
    if e_kin_max is None:
        cap = grip.v_cap if grip.v_cap is not None else np.inf
        e_kin_max = max_kinetic_energy_arrays(
            track, params, grid, grip.mu_scale, aero_scale_nodes, cap
        )
    e_kin_max = np.asarray(e_kin_max, dtype=float)

    x0 = boundary.x0
    _precheck_boundary(boundary, params, e_kin_max)

    grade = grade_at(track, nodes)
    c_a = aero_scale_nodes * params.rho_cd_A / params.m_eq
    resist = params.c_r * params.m * G * np.cos(grade) + params.m * G * np.sin(grade)
    h = grid.steps
    e_floor = 0.5 * params.m_eq * V_FLOOR**2

    # all decision variables are nondimensionalized by the S_* scales
    E_kin = cp.Variable(n, name="E_kin")
    v = cp.Variable(n, name="v")
    ell = cp.Variable(n, name="lethargy")
    F_m = cp.Variable(n, name="F_m")
    F_brake = cp.Variable(n, name="F_brake")
    F_loss_m = cp.Variable(n, name="F_loss_m")
    F_dc = cp.Variable(n, name="F_dc")
    F_loss_b = cp.Variable(n, name="F_loss_b")
    E_b = cp.Variable(n, name="E_b")
    th_m = cp.Variable(n, name="theta_m")
    th_b = cp.Variable(n, name="theta_b")

    def trapz(expr):
        return cp.multiply(h, expr[:-1] + expr[1:]) / 2.0

    f_kin = (S_F * (F_m + F_brake) - cp.multiply(c_a * S_EKIN, E_kin) - resist) / S_EKIN
    f_eb = -S_F * (F_dc + F_loss_b) / S_EB
    cool_m = cp.multiply(params.h_m * lethargy_ref, th_m - params.theta_cool)
    cool_b = cp.multiply(params.h_b * lethargy_ref, th_b - params.theta_cool)
    f_thm = (S_F * F_loss_m - cool_m) / params.C_m
    f_thb = (S_F * F_loss_b - cool_b) / params.C_b

    cons = {}
    # Difference-quotient form: the equality row dual then carries the step
    # measure, so dual/h is a grid-independent per-meter co-state sample.
    cons["ekin_dyn"] = cp.multiply(1.0 / h, E_kin[1:] - E_kin[:-1]) == (f_kin[:-1] + f_kin[1:]) / 2.0
    cons["eb_dyn"] = cp.multiply(1.0 / h, E_b[1:] - E_b[:-1]) == (f_eb[:-1] + f_eb[1:]) / 2.0
    cons["thm_dyn"] = cp.multiply(1.0 / h, th_m[1:] - th_m[:-1]) == (f_thm[:-1] + f_thm[1:]) / 2.0
    cons["thb_dyn"] = cp.multiply(1.0 / h, th_b[1:] - th_b[:-1]) == (f_thb[:-1] + f_thb[1:]) / 2.0
    cons["fdc_link"] = F_dc == F_m + F_loss_m + (params.P_aux * S_ELL / S_F) * ell
    cons["init"] = [
        E_kin[0] == x0.E_kin / S_EKIN,
        E_b[0] == x0.E_b / S_EB,
        th_m[0] == x0.theta_m,
        th_b[0] == x0.theta_b,
    ]
    # v_s^2 <= (2 S_EKIN / (S_V^2 m_eq)) E_s  is the physical speed cone
    cons["cone_speed"] = cp.square(v) <= (2.0 * S_EKIN / (S_V**2 * params.m_eq)) * E_kin
    # S_ELL * S_V = 1 makes ell_s * v_s >= 1 the physical hyperbolic cone
    cons["cone_hyperbolic"] = cp.SOC(
        ell + v, cp.vstack([2.0 * np.ones(n), ell - v]), axis=0
    )
    cons["cone_loss_m"] = (
        F_loss_m - params.beta_m / S_F >= (params.alpha_m * S_F) * cp.square(F_m)
    )
    cons["cone_loss_b"] = F_loss_b >= (params.alpha_b * S_F) * cp.square(F_dc)
    cons["limits"] = [
        F_m <= (params.P_max * S_ELL / S_F) * ell,
        F_m >= -(params.P_regen * S_ELL / S_F) * ell,
        F_m <= params.F_m_max / S_F,
        F_m >= -params.F_m_max / S_F,
        F_brake <= 0,
        F_brake >= -params.F_brake_max / S_F,
        E_kin <= e_kin_max / S_EKIN,
        E_kin >= e_floor / S_EKIN,
        E_b <= params.E_b_max / S_EB,
        E_b >= params.E_b_min / S_EB,
        th_m <= params.theta_m_max,
        th_b <= params.theta_b_max,
    ]
    cons["terminal"] = [
        E_b[-1] >= boundary.E_b_target / S_EB,
        th_b[-1] <= boundary.theta_b_target,
    ]

    # Objective in true seconds.  The tiny loss-term regularizer breaks the
    # degeneracy of the loss epigraphs when energy is abundant (otherwise the
    # reported loss, battery and thermal trajectories are slack, non-physical
    # upper envelopes); it is stripped from t_pred after the solve.
    reg = 1e-6 * cp.sum(cp.multiply(h, (F_loss_m + F_loss_b)[1:]))
    objective = cp.Minimize(cp.sum(trapz(ell)) * S_ELL + reg)
    flat = []
    for c in cons.values():
        flat.extend(c if isinstance(c, list) else [c])
    problem = cp.Problem(objective, flat)

    n_int = n - 1
    counts = {
        "variables": 11 * n,
        "equalities": 5 * n_int + 5,
        "cone_memberships": 4 * n,
        "inequalities": 12 * n + 2,
    }
    return ConicProblem(
        problem=problem,
        variables={
            "E_kin": E_kin, "v": v, "lethargy": ell, "F_m": F_m,
            "F_brake": F_brake, "F_loss_m": F_loss_m, "F_dc": F_dc,
            "F_loss_b": F_loss_b, "E_b": E_b, "theta_m": th_m, "theta_b": th_b,
        },
        scales={
            "E_kin": S_EKIN, "v": S_V, "lethargy": S_ELL, "F_m": S_F,
            "F_brake": S_F, "F_loss_m": S_F, "F_dc": S_F,
            "F_loss_b": S_F, "E_b": S_EB, "theta_m": 1.0, "theta_b": 1.0,
        },
        constraints=cons,
        counts=counts,
        grid=grid,
        boundary=boundary,
        params=params,
        e_kin_max=e_kin_max,
        c_a_nodes=c_a,
        resist_nodes=resist,
        lethargy_ref=lethargy_ref,
    )


def _precheck_boundary(boundary: StintBoundary, params: VehicleParams, e_kin_max: np.ndarray):
    x0 = boundary.x0
    dist = boundary.S_stint - boundary.s0
    if boundary.E_b_target > params.E_b_max:
        raise InfeasibleProblemError(
            "terminal battery energy",
            f"E_b_target {boundary.E_b_target:.3e} J exceeds capacity "
            f"{params.E_b_max:.3e} J",
        )
    if boundary.E_b_target > x0.E_b + params.F_m_max * dist:
        raise InfeasibleProblemError(
            "terminal battery energy",
            "E_b_target unreachable even under maximum regeneration",
        )
    if boundary.theta_b_target < params.theta_cool and x0.theta_b > boundary.theta_b_target:
        raise InfeasibleProblemError(
            "terminal battery temperature",
            "battery cannot cool below the coolant temperature",
        )
    if x0.E_kin > e_kin_max[0] * (1 + 1e-9):
        raise InfeasibleProblemError(
            "vehicle dynamics",
            "initial kinetic energy exceeds the grip bound at s0",
        )


TIGHT_TOL = 1e-4
TIGHT_WARN = 1e-3


def solve(conic: ConicProblem, solver: str = SOLVER) -> PlanSolution:
    """Solve the conic program and extract the normalized co-state.

    Raises :class:`InfeasibleProblemError` naming the first violated
    constraint family (found by a slack-relaxed diagnosis solve) when the
    solver reports infeasibility.
    """
    t0 = time.perf_counter()
    try:
        conic.problem.solve(solver=solver)
    except cp.error.SolverError as exc:
        raise InfeasibleProblemError("solver failure", str(exc)) from exc
    wall = time.perf_counter() - t0
    status = conic.problem.status
    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        family = _diagnose_infeasibility(conic, solver)
        raise InfeasibleProblemError(family, f"problem infeasible ({family})")
    if status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
        raise InfeasibleProblemError("objective", "problem unbounded")
    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise InfeasibleProblemError("solver failure", f"status {status}")

    V = {
        k: np.asarray(var.value, dtype=float) * conic.scales[k]
        for k, var in conic.variables.items()
    }
    h = conic.grid.steps

    # duals of the scaled kinetic dynamics are per E_kin/S_EKIN unit; divide
    # back to s/J, then by the step for the per-meter co-state density.
    # Each dual samples the interval midpoint and carries a parasitic
    # alternating mode (trapezoidal adjoint); averaging adjacent intervals
    # cancels it and gives node-aligned values.
    dual = np.asarray(conic.constraints["ekin_dyn"].dual_value, dtype=float)
    lam = dual / (S_EKIN * h)
    if np.nansum(lam) > 0:  # orient so the co-state is non-positive
        lam = -lam
    lambda_kin = np.empty(len(h) + 1)
    lambda_kin[1:-1] = 0.5 * (lam[:-1] + lam[1:])
    lambda_kin[0] = lam[0]
    lambda_kin[-1] = lam[-1]
    # Junctions where the kinetic-energy cap engages leave small positive
    # spikes in the discrete adjoint; the continuous co-state is <= 0, and
    # any non-negative value triggers coasting regardless, so clip.
    np.minimum(lambda_kin, 0.0, out=lambda_kin)

    ell, v, e_kin = V["lethargy"], V["v"], V["E_kin"]
    t_pred = float(np.sum(h * (ell[:-1] + ell[1:]) / 2.0))
    r_hyp = np.abs(ell * v - 1.0)
    sq = 2.0 * e_kin / conic.params.m_eq
    r_speed = np.abs(sq - v**2) / np.maximum(sq, 1e-12)
    tight_frac = float(np.mean((r_hyp <= TIGHT_TOL) & (r_speed <= TIGHT_TOL)))
    warning = bool(max(r_hyp.max(), r_speed.max()) > TIGHT_WARN)

    return PlanSolution(
        grid=conic.grid,
        E_kin=e_kin,
        v=v,
        lethargy=ell,
        F_m=V["F_m"],
        F_brake=V["F_brake"],
        F_loss_m=V["F_loss_m"],
        F_dc=V["F_dc"],
        F_loss_b=V["F_loss_b"],
        E_b=V["E_b"],
        theta_m=V["theta_m"],
        theta_b=V["theta_b"],
        lambda_kin=lambda_kin,
        t_pred=t_pred,
        status=status,
        tightness_hyperbolic=float(r_hyp.max()),
        tightness_speed=float(r_speed.max()),
        tight_fraction=tight_frac,
        tightness_warning=warning,
        solve_seconds=wall,
    )


def _diagnose_infeasibility(conic: ConicProblem, solver: str) -> str:
    """Re-solve with elastic slacks to name the binding constraint family."""
    params = conic.params
    boundary = conic.boundary
    cons = []
    for key in ("ekin_dyn", "eb_dyn", "thm_dyn", "thb_dyn", "fdc_link"):
        cons.append(conic.constraints[key])
    cons.extend(conic.constraints["init"])
    cons.append(conic.constraints["cone_speed"])
    cons.append(conic.constraints["cone_hyperbolic"])
    cons.append(conic.constraints["cone_loss_m"])
    cons.append(conic.constraints["cone_loss_b"])

    V = conic.variables
    s_eb_term = cp.Variable(nonneg=True)  # slacks live in scaled units
    s_thb_term = cp.Variable(nonneg=True)
    s_eb_floor = cp.Variable(nonneg=True)
    s_thm = cp.Variable(nonneg=True)
    s_thb = cp.Variable(nonneg=True)
    cons += [
        V["F_m"] <= (params.P_max * S_ELL / S_F) * V["lethargy"],
        V["F_m"] >= -(params.P_regen * S_ELL / S_F) * V["lethargy"],
        V["F_m"] <= params.F_m_max / S_F,
        V["F_m"] >= -params.F_m_max / S_F,
        V["F_brake"] <= 0,
        V["F_brake"] >= -params.F_brake_max / S_F,
        V["E_kin"] <= conic.e_kin_max / S_EKIN,
        V["E_kin"] >= 0.5 * params.m_eq * V_FLOOR**2 / S_EKIN,
        V["E_b"] <= params.E_b_max / S_EB,
        V["E_b"] >= params.E_b_min / S_EB - s_eb_floor,
        V["theta_m"] <= params.theta_m_max + s_thm,
        V["theta_b"] <= params.theta_b_max + s_thb,
        V["E_b"][-1] >= boundary.E_b_target / S_EB - s_eb_term,
        V["theta_b"][-1] <= boundary.theta_b_target + s_thb_term,
    ]
    obj = cp.Minimize(s_eb_term + s_eb_floor + (s_thb_term + s_thm + s_thb) / 50.0)
    relaxed = cp.Problem(obj, cons)
    try:
        relaxed.solve(solver=solver)
    except cp.error.SolverError:
        return "unknown"
    if relaxed.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return "vehicle dynamics"
    checks = [
        ("terminal battery energy", s_eb_term.value, 1e4 / S_EB),
        ("battery energy floor", s_eb_floor.value, 1e4 / S_EB),
        ("terminal battery temperature", s_thb_term.value, 1e-3),
        ("battery thermal", s_thb.value, 1e-3),
        ("motor thermal", s_thm.value, 1e-3),
    ]
    for family, val, tol in checks:
        if val is not None and float(val) > tol:
            return family
    return "unknown"


def detect_apexes(e_kin: np.ndarray, s_nodes: np.ndarray, window: float = 10.0) -> list[int]:
    """Indices of corner apexes: dips of planned kinetic energy.

    Handles plateaus (kinetic energy pinned at the grip bound through a
    corner) by reporting the plateau start.  A dip must undercut its
    surroundings within ``window`` meters on both sides, which filters
    numerical ripple on straights.
    """
    n = len(e_kin)
    apexes = []
    k = 1
    while k < n - 1:
        if e_kin[k] <= e_kin[k - 1] and e_kin[k] <= e_kin[k + 1]:
            # extend over the plateau of (numerically) equal values
            j = k
            tol = 1e-6 * max(abs(e_kin[k]), 1.0)
            while j + 1 < n and abs(e_kin[j + 1] - e_kin[k]) <= tol:
                j += 1
            lo = np.searchsorted(s_nodes, s_nodes[k] - window)
            hi = np.searchsorted(s_nodes, s_nodes[j] + window, side="right")
            before = e_kin[lo:k]
            after = e_kin[j + 1:hi]
            rise = 1e-3 * max(abs(e_kin[k]), 1.0)
            if (
                before.size > 0
                and after.size > 0
                and before.max() > e_kin[k] + rise
                and after.max() > e_kin[k] + rise
            ):
                apexes.append(k)
            k = j + 1
        else:
            k += 1
    return apexes


def flatten_costate(lambda_kin: np.ndarray, apex_indices: list[int]) -> np.ndarray:
    """Overwrite each [apex, argmin-of-following-span] with the span minimum."""
    lam = np.array(lambda_kin, dtype=float)
    if not apex_indices:
        return lam
    bounds = list(apex_indices) + [len(lam)]
    for a, nxt in zip(bounds[:-1], bounds[1:]):
        span = lam[a:nxt]
        if span.size == 0:
            continue
        k_min = int(np.argmin(span))
        lam[a:a + k_min + 1] = span[k_min]
    return lam


def robustify_costate(plan: PlanSolution, track: TrackProfile, grid: Grid) -> np.ndarray:
    """Robustified co-state ready for threshold-based coast signaling.

    Flattening each apex-to-minimum span guards against a driver reaching
    full throttle earlier than the plan assumed, which would otherwise
    trigger premature coast instructions right after the corner.
    """
    apexes = detect_apexes(plan.E_kin, grid.nodes)
    return flatten_costate(plan.lambda_kin, apexes)
