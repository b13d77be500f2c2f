"""Longitudinal vehicle, powertrain and thermal model in the space domain.

One model class serves two consumers: the convex planner uses it in relaxed
form (see :mod:`stintopt.socp`) and the simulator integrates the exact
non-relaxed equations with a second-order Adams-Bashforth scheme.  Energy
flows are expressed as forces (power / speed) because the independent
variable is distance, so every "force" below is also a per-meter energy
rate.

States: kinetic energy E_kin [J], battery energy E_b [J], motor temperature
theta_m [K], battery temperature theta_b [K], elapsed time t [s].
Inputs: motor force at the wheels F_m [N] (negative while regenerating) and
mechanical brake force F_brake [N] <= 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import BrakingInfeasibleError, ParamError, StallError
from .track import G, GripState, Grid, TrackProfile, grade_at, max_kinetic_energy


@dataclass(frozen=True)
class VehicleParams:
    """Vehicle, powertrain, loss and thermal parameters (SI units).

    The motor and inverter are merged into one quadratic-in-force loss with
    curvature ``alpha_m`` and constant drag ``beta_m``; the battery adds a
    quadratic loss on the DC-side force.  ``v_max_straight`` caps the
    kinetic-energy bound where curvature provides none.
    """

    m_eq: float          # equivalent mass incl. rotating inertia [kg]
    m: float             # vehicle mass [kg]
    rho_cd_A: float      # air density * drag coefficient * frontal area [kg/m]
    rho_cl_A: float      # air density * lift (downforce) coefficient * area [kg/m]
    c_r: float           # rolling resistance coefficient [-]
    mu0: float           # base tire grip coefficient [-]
    P_max: float         # max propulsive electrical-side power [W]
    P_regen: float       # max regenerative power [W]
    F_m_max: float       # max |motor force| at the wheels [N]
    F_brake_max: float   # max mechanical brake force magnitude [N]
    alpha_m: float       # motor+inverter loss curvature [1/N]
    beta_m: float        # motor+inverter constant loss force [N]
    alpha_b: float       # battery loss curvature [1/N]
    P_aux: float         # auxiliary power draw [W]
    C_m: float           # motor thermal capacity [J/K]
    C_b: float           # battery thermal capacity [J/K]
    h_m: float           # motor cooling conductance [W/K]
    h_b: float           # battery cooling conductance [W/K]
    theta_cool: float    # coolant temperature [K]
    theta_m_max: float   # motor temperature limit [K]
    theta_b_max: float   # battery temperature limit [K]
    E_b_min: float       # battery energy floor [J]
    E_b_max: float       # battery energy capacity [J]
    v_max_straight: float  # straight-line speed cap [m/s]

    def __post_init__(self):
        positive = (
            "m_eq", "m", "rho_cd_A", "rho_cl_A", "mu0", "P_max", "P_regen",
            "F_m_max", "F_brake_max", "C_m", "C_b", "h_m", "h_b",
            "theta_cool", "theta_m_max", "theta_b_max", "v_max_straight",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ParamError(f"{name} must be positive")
        if self.c_r < 0 or self.alpha_m < 0 or self.alpha_b < 0 or self.beta_m < 0:
            raise ParamError("loss coefficients must be non-negative")
        if self.P_aux < 0:
            raise ParamError("P_aux must be non-negative")
        if not self.E_b_min < self.E_b_max:
            raise ParamError("E_b_min must be below E_b_max")


@dataclass(frozen=True)
class VehicleState:
    """Snapshot of the integrated states at distance ``s``."""

    E_kin: float
    E_b: float
    theta_m: float
    theta_b: float
    s: float = 0.0
    t: float = 0.0

    def speed(self, params: VehicleParams) -> float:
        return math.sqrt(2.0 * self.E_kin / params.m_eq)


@dataclass(frozen=True)
class ControlInput:
    """Driver pedal demand resolved into wheel forces."""

    F_m: float
    F_brake: float = 0.0
    u_th: float = 0.0

    def __post_init__(self):
        if self.F_brake > 1e-9:
            raise ParamError("F_brake must be <= 0")


@dataclass(frozen=True)
class Derivatives:
    """Per-meter state derivatives plus the loss diagnostics behind them."""

    dE_kin: float
    dE_b: float
    dtheta_m: float
    dtheta_b: float
    dt: float
    v: float
    F_loss_m: float
    F_dc: float
    F_loss_b: float


def derivatives(
    state: VehicleState,
    inp: ControlInput,
    grip: GripState,
    params: VehicleParams,
    grade: float = 0.0,
) -> Derivatives:
    """Evaluate the exact model right-hand side at one point."""
    if state.E_kin <= 0:
        raise StallError(state.s)
    v = math.sqrt(2.0 * state.E_kin / params.m_eq)
    ell = 1.0 / v
    c_a = grip.aero_scale * params.rho_cd_A / params.m_eq
    resist = params.c_r * params.m * G * math.cos(grade) + params.m * G * math.sin(grade)
    dE_kin = inp.F_m + inp.F_brake - c_a * state.E_kin - resist
    F_loss_m = params.alpha_m * inp.F_m**2 + params.beta_m
    F_dc = inp.F_m + F_loss_m + params.P_aux * ell
    F_loss_b = params.alpha_b * F_dc**2
    dE_b = -(F_dc + F_loss_b)
    dtheta_m = (F_loss_m - params.h_m * (state.theta_m - params.theta_cool) * ell) / params.C_m
    dtheta_b = (F_loss_b - params.h_b * (state.theta_b - params.theta_cool) * ell) / params.C_b
    return Derivatives(dE_kin, dE_b, dtheta_m, dtheta_b, ell, v, F_loss_m, F_dc, F_loss_b)


def step_ab2(
    prev_f: Derivatives | None,
    curr_f: Derivatives,
    state: VehicleState,
    h: float,
) -> VehicleState:
    """Advance the state by ``h`` meters with second-order Adams-Bashforth.

    The first step of a march (``prev_f is None``) falls back to explicit
    Euler, which bootstraps the two-step scheme.
    """
    if h <= 0:
        raise ParamError("step must be positive")
    if prev_f is None:
        w1, w0 = 1.0, 0.0
        prev_f = curr_f
    else:
        w1, w0 = 1.5, -0.5
    E_kin = state.E_kin + h * (w1 * curr_f.dE_kin + w0 * prev_f.dE_kin)
    if E_kin <= 0:
        raise StallError(state.s + h)
    return VehicleState(
        E_kin=E_kin,
        E_b=state.E_b + h * (w1 * curr_f.dE_b + w0 * prev_f.dE_b),
        theta_m=state.theta_m + h * (w1 * curr_f.dtheta_m + w0 * prev_f.dtheta_m),
        theta_b=state.theta_b + h * (w1 * curr_f.dtheta_b + w0 * prev_f.dtheta_b),
        s=state.s + h,
        t=state.t + h * (w1 * curr_f.dt + w0 * prev_f.dt),
    )


def invert_for_bound(
    state: VehicleState,
    E_kin_next_target: float,
    prev_f: Derivatives | None,
    h: float,
    params: VehicleParams,
    grip: GripState,
    grade: float = 0.0,
) -> ControlInput:
    """Inputs that land the next kinetic energy exactly on a target.

    Solves the same integration update used by :func:`step_ab2` for the
    total longitudinal force, then allocates it to the motor first (within
    force and power limits, maximizing recuperation) and the remainder to
    the mechanical brakes.
    """
    if E_kin_next_target <= 0:
        raise StallError(state.s + h, "kinetic energy target is non-positive")
    v = math.sqrt(2.0 * state.E_kin / params.m_eq)
    ell = 1.0 / v
    c_a = grip.aero_scale * params.rho_cd_A / params.m_eq
    resist = params.c_r * params.m * G * math.cos(grade) + params.m * G * math.sin(grade)
    if prev_f is None:
        needed = (E_kin_next_target - state.E_kin) / h
    else:
        needed = ((E_kin_next_target - state.E_kin) / h + 0.5 * prev_f.dE_kin) / 1.5
    F_total = needed + c_a * state.E_kin + resist
    F_m_hi = min(params.F_m_max, params.P_max * ell)
    F_m_lo = -min(params.F_m_max, params.P_regen * ell)
    F_m = min(max(F_total, F_m_lo), F_m_hi)
    F_brake = F_total - F_m
    if F_brake < -params.F_brake_max - 1e-6:
        raise BrakingInfeasibleError(-F_brake - params.F_brake_max, state.s)
    F_brake = min(F_brake, 0.0)
    if F_brake > 0:  # numerical residue when F_total exceeds F_m_hi
        F_brake = 0.0
    u_th = min(max(F_m / F_m_hi, 0.0), 1.0) if F_m > 0 else 0.0
    return ControlInput(F_m=F_m, F_brake=F_brake, u_th=u_th)


def backward_envelope(
    bound: np.ndarray,
    steps: np.ndarray,
    f_decel: np.ndarray,
    c_a: np.ndarray | None = None,
) -> np.ndarray:
    """Backward sweep limiting how much kinetic energy each node may carry.

    ``bound`` is the grip/cap kinetic-energy limit per node, ``steps`` the
    interval lengths and ``f_decel`` the per-node achievable deceleration
    force [N] (= J/m) excluding drag.  ``c_a`` adds the drag contribution
    evaluated at the downstream node's envelope value, which understates
    the drag actually available while braking and so stays conservative.
    Pure backward recurrence; the result never exceeds the input bound.
    """
    env = np.array(bound, dtype=float)
    for k in range(len(env) - 2, -1, -1):
        f = f_decel[k]
        if c_a is not None:
            f += c_a[k] * env[k + 1]
        env[k] = min(env[k], env[k + 1] + steps[k] * f)
    return env


def braking_envelope(
    track: TrackProfile,
    grip: GripState,
    params: VehicleParams,
    grid: Grid,
    e_kin_max: np.ndarray | None = None,
    aero_scale_nodes: np.ndarray | None = None,
) -> np.ndarray:
    """Kinetic-energy bound the simulated driver brakes against.

    Tightens the grip bound backwards so corners are reachable within the
    combined regen + brake + resistance deceleration.  Regen force depends
    on the braking speed, so the sweep is iterated from the grip-bound
    speed until it settles.  ``e_kin_max`` overrides the grip bound when
    the caller already holds a disturbed profile.
    """
    if e_kin_max is None:
        e_kin_max = max_kinetic_energy(track, params, grip, grid)
    nodes = grid.nodes
    grade = grade_at(track, nodes)
    if aero_scale_nodes is None:
        aero_scale_nodes = np.full(nodes.shape, grip.aero_scale)
    resist = params.c_r * params.m * G * np.cos(grade) + params.m * G * np.sin(grade)
    c_a = np.asarray(aero_scale_nodes, float) * params.rho_cd_A / params.m_eq
    # Regen force needs the speed while braking, which depends on the
    # envelope itself; iterate from the grip-bound speed (an upper bound,
    # so every pass stays conservative) until the sweep settles.
    env = np.asarray(e_kin_max, dtype=float)
    for _ in range(4):
        v_up = np.sqrt(2.0 * env / params.m_eq)
        f_regen = np.minimum(params.F_m_max, params.P_regen / np.maximum(v_up, 1e-6))
        new = backward_envelope(e_kin_max, grid.steps, f_regen + params.F_brake_max + resist, c_a)
        if np.allclose(new, env, rtol=1e-12, atol=1e-6):
            env = new
            break
        env = new
    return env


def default_params() -> VehicleParams:
    """Synthetic but physically plausible electric endurance racer.

    Not measured from any real vehicle; all shipped configs and tests run
    on this set.
    """
    return VehicleParams(
        m_eq=1050.0,
        m=1000.0,
        rho_cd_A=1.35,
        rho_cl_A=3.8,
        c_r=0.012,
        mu0=1.5,
        P_max=250e3,
        P_regen=150e3,
        F_m_max=5200.0,
        F_brake_max=13000.0,
        alpha_m=1.1e-5,
        beta_m=28.0,
        alpha_b=6.0e-6,
        P_aux=2000.0,
        C_m=60e3,
        C_b=400e3,
        h_m=300.0,
        h_b=180.0,
        theta_cool=305.0,
        theta_m_max=400.0,
        theta_b_max=330.0,
        E_b_min=8e6,
        E_b_max=165e6,
        v_max_straight=92.0,
    )


def load_params_json(path) -> VehicleParams:
    """Read vehicle parameters from JSON; keys must match the field names exactly."""
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ParamError(f"{path}: expected a JSON object")
    names = {f.name for f in fields(VehicleParams)}
    unknown = set(data) - names
    if unknown:
        raise ParamError(f"{path}: unknown parameter keys {sorted(unknown)}")
    missing = names - set(data)
    if missing:
        raise ParamError(f"{path}: missing parameter keys {sorted(missing)}")
    return VehicleParams(**{k: float(v) for k, v in data.items()})


def save_params_json(params: VehicleParams, path) -> None:
    data = {f.name: getattr(params, f.name) for f in fields(VehicleParams)}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
