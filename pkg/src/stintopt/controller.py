"""Shrinking-horizon re-planning with PI coast-threshold feedback.

Three deployment variants share one controller object.  The fully online
variant re-solves the convex plan and re-bisects the threshold from the
measured state; the fixed co-state variant keeps the offline co-state and
only re-bisects; the fixed co-state and threshold variant never re-plans
and instead trims the threshold with an energy-rate PI loop.  Re-plans are
computed from a snapshot of the measured state and installed atomically
after a simulated solve latency, so the step loop always reads a complete
plan.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleProblemError, ParamError
from .liftcoast import (
    CoastPlan,
    MapResult,
    SimContext,
    ThrottleMap,
    bisect_threshold,
    build_sim_context,
    fit_coast_thresholds,
)
from .model import VehicleParams, VehicleState
from .socp import PlanSolution, StintBoundary, build_problem, solve
from .track import GripState, TrackProfile, build_grid


class Variant(str, enum.Enum):
    """How much of the optimization stack runs on the car."""

    FULLY_ONLINE = "fully_online"
    FIXED_COSTATE = "fixed_costate"
    FIXED_COSTATE_AND_THRESHOLD = "fixed_costate_and_threshold"


@dataclass(frozen=True)
class ControllerConfig:
    """Variant selection, re-plan cadence and feedback gains.

    Gains act on normalized errors (battery energy over capacity, or
    energy rate over the target rate) and are converted to threshold
    units through ``lambda_scale``; the integral term accumulates per
    kilometer driven.  ``lambda_scale`` of None means the span of the
    robustified co-state.
    """

    variant: Variant = Variant.FIXED_COSTATE
    mpc_period: float = 30.0   # [s] simulated time between re-plans
    mpc_latency: float = 2.5   # [s] simulated solve latency
    K_p: float = 0.5
    K_i: float = 0.01
    delta_s_window: float = 4000.0  # [m] energy-rate measurement window
    anti_windup_fcy: bool = False
    v_coast_min: float = 0.0   # [m/s] suppress coasting below; 0 disables
    active_map: int = 1
    lambda_scale: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.mpc_period <= self.mpc_latency:
            raise ParamError("mpc_period must exceed the solve latency")
        if self.K_p < 0 or self.K_i < 0:
            raise ParamError("feedback gains must be >= 0")
        if self.delta_s_window <= 0:
            raise ParamError("delta_s_window must be positive")
        if self.v_coast_min < 0:
            raise ParamError("v_coast_min must be >= 0")


TRACE_FIELDS = (
    "s", "t", "variant", "lambda_kin_at_s", "lambda_star_adj",
    "error", "coast_signal", "grip_limited",
)


@dataclass(frozen=True)
class TraceRecord:
    """One controller decision, in trace-CSV column order."""

    s: float
    t: float
    variant: str
    lambda_kin_at_s: float
    lambda_star_adj: float
    error: float
    coast_signal: bool
    grip_limited: bool

    def as_row(self) -> tuple:
        return (self.s, self.t, self.variant, self.lambda_kin_at_s,
                self.lambda_star_adj, self.error,
                int(self.coast_signal), int(self.grip_limited))


@dataclass
class ControllerState:
    """Installed plan snapshot plus the thread-confined accumulators."""

    coast: CoastPlan
    plan_time: float
    lambda_star: float
    ref_s: np.ndarray
    ref_E_b: np.ndarray
    ref_theta_m: np.ndarray
    ref_theta_b: np.ndarray
    integral: float = 0.0  # normalized error integrated over km
    last_signal: bool = False
    window: deque = field(default_factory=deque)  # (s, E_kin + E_b) samples


def decide_signal(
    lam_at_s: float,
    lam_star_adj: float,
    grip_limited: bool,
    v: float,
    v_coast_min: float = 0.0,
) -> bool:
    """Coast iff the co-state clears the threshold while full-throttle.

    Ties coast; a configured minimum coasting speed suppresses the signal
    below that speed.
    """
    if grip_limited:
        return False
    if v_coast_min > 0 and v < v_coast_min:
        return False
    return bool(lam_at_s >= lam_star_adj)


class Controller:
    """Produces the per-meter coast signal and schedules re-plans.

    The plant calls :meth:`step` every meter and :meth:`mpc_update` on its
    re-plan schedule.  A computed re-plan is held back until its delivery
    time passes, mimicking on-car solve latency; installation swaps the
    whole state snapshot and zeroes the integral accumulator.
    """

    def __init__(
        self,
        config: ControllerConfig,
        plan: PlanSolution,
        coast: CoastPlan,
        boundary: StintBoundary,
        track: TrackProfile,
        params: VehicleParams,
        grip: GripState,
    ):
        self.config = config
        self.boundary = boundary
        self.track = track
        self.params = params
        self.grip = grip
        self.failures: list[str] = []
        self._pending: tuple[float, ControllerState] | None = None
        # frozen offline artifacts: the co-state carrier plan and the
        # cooling linearization reused by every online re-solve
        self._plan0 = plan
        span = float(coast.lambda_kin.max() - coast.lambda_kin.min())
        if config.lambda_scale is not None:
            self._lambda_scale = config.lambda_scale
        else:
            self._lambda_scale = span if span > 0 else 1e-6
        x0 = boundary.x0
        denom = boundary.S_stint - boundary.s0
        self._target_rate = (x0.E_kin + x0.E_b - boundary.E_b_target) / denom
        self._rate_norm = max(abs(self._target_rate), 1.0)
        self.state = self._snapshot(coast, 0.0)

    def _active_result(self, coast: CoastPlan) -> MapResult:
        for m in coast.maps:
            if m.id == self.config.active_map:
                return m
        raise ParamError(f"map {self.config.active_map} not in coast plan")

    def _snapshot(self, coast: CoastPlan, t_now: float) -> ControllerState:
        m = self._active_result(coast)
        if not m.feasible:
            raise InfeasibleProblemError(
                "coast feasibility", f"map {m.id} has no feasible threshold"
            )
        if m.sim is not None:
            ref_s = coast.grid.nodes
            refs = (m.sim.E_b, m.sim.theta_m, m.sim.theta_b)
        else:  # fall back to the relaxation trajectories
            ref_s = self._plan0.grid.nodes
            refs = (self._plan0.E_b, self._plan0.theta_m, self._plan0.theta_b)
        return ControllerState(
            coast=coast, plan_time=t_now, lambda_star=m.lambda_star,
            ref_s=ref_s, ref_E_b=refs[0], ref_theta_m=refs[1],
            ref_theta_b=refs[2],
        )

    # -- re-planning ----------------------------------------------------

    def mpc_update(self, measured: VehicleState, t_now: float) -> ControllerState | None:
        """Compute a fresh plan from the measured state and queue it.

        Returns the queued snapshot, or None when the variant never
        re-plans, the horizon is exhausted, or the solve failed (the
        previous plan then stays installed and the failure is logged).
        """
        cfg = self.config
        if cfg.variant is Variant.FIXED_COSTATE_AND_THRESHOLD:
            return None
        if measured.s >= self.boundary.S_stint - 1.0:
            return None  # terminal mode: nothing left to plan
        try:
            coast = self._replan(measured)
            snap = self._snapshot(coast, t_now + cfg.mpc_latency)
        except (InfeasibleProblemError, ParamError) as err:
            self.failures.append(f"s={measured.s:.0f}: {err}")
            return None
        self._pending = (t_now + cfg.mpc_latency, snap)
        return snap

    def _replan(self, measured: VehicleState) -> CoastPlan:
        cfg = self.config
        x0 = VehicleState(measured.E_kin, measured.E_b,
                          measured.theta_m, measured.theta_b,
                          s=measured.s, t=measured.t)
        b = StintBoundary(measured.s, self.boundary.S_stint, x0,
                          self.boundary.E_b_target, self.boundary.theta_b_target)
        tmap = ThrottleMap(cfg.active_map, self._map_power())
        if cfg.variant is Variant.FULLY_ONLINE:
            grid = build_grid(self.track, b.s0, b.S_stint, mode="optimizer")
            ell_ref = np.interp(grid.nodes, self._plan0.grid.nodes,
                                self._plan0.lethargy)
            plan = solve(build_problem(self.track, self.params, self.grip,
                                       b, grid, lethargy_ref=ell_ref))
            return fit_coast_thresholds(plan, [tmap], b, self.track, self.params,
                                  self.grip, v_coast_min=cfg.v_coast_min)
        # fixed co-state: re-bisect the stored co-state on what remains
        ctx = build_sim_context(self._plan0, b, self.track, self.params,
                                self.grip)
        res = bisect_threshold(tmap, b, self.track, self.params, self.grip,
                               ctx, v_coast_min=cfg.v_coast_min)
        coast = CoastPlan(lambda_kin=ctx.lam, grid=ctx.grid, maps=[res])
        coast.best()  # raises when the re-bisection found nothing feasible
        return coast

    def _map_power(self) -> float:
        return self._active_result(self.state.coast).P_full

    def install_pending(self, t_now: float) -> bool:
        """Swap in a queued plan once its delivery time has passed."""
        if self._pending is None or t_now < self._pending[0]:
            return False
        self.state = self._pending[1]
        self._pending = None
        return True

    # -- feedback laws ----------------------------------------------------

    def feedback_threshold(self, measured: VehicleState) -> tuple[float, float]:
        """Battery-energy tracking PI: returns (adjusted threshold, error).

        Under-consumption (positive error) raises the threshold and trims
        coasting; the error is battery energy relative to the installed
        plan, normalized by pack capacity.
        """
        st = self.state
        e_ref = float(np.interp(measured.s, st.ref_s, st.ref_E_b))
        e = (measured.E_b - e_ref) / self.params.E_b_max
        adj = st.lambda_star + (self.config.K_p * e
                                + self.config.K_i * st.integral) * self._lambda_scale
        return adj, e

    def energy_rate_feedback(
        self, measured: VehicleState
    ) -> tuple[float, float, bool]:
        """Energy-rate PI on the ring buffer: (adjusted threshold, rate
        error, window spanned flag).

        The rate error compares total (kinetic + battery) energy use per
        meter over the trailing window against the whole-stint target
        rate, normalized by that target.  Over-consumption lowers the
        threshold.  Until the window spans its full length the integral
        term is withheld (proportional-only fallback).
        """
        st = self.state
        e_tot = measured.E_kin + measured.E_b
        dx_n = 0.0
        spanned = False
        if st.window:
            s_front, e_front = st.window[0]
            span = measured.s - s_front
            if span > 0:
                rate = (e_front - e_tot) / span  # [J/m] consumed
                dx_n = (rate - self._target_rate) / self._rate_norm
                spanned = span >= self.config.delta_s_window * (1.0 - 1e-9)
        integral = st.integral if spanned else 0.0
        adj = st.lambda_star - (self.config.K_p * dx_n
                                + self.config.K_i * integral) * self._lambda_scale
        return adj, dx_n, spanned

    # -- per-meter decision -----------------------------------------------

    def step(
        self,
        measured: VehicleState,
        *,
        grip_limited: bool,
        t_now: float,
        ds: float = 1.0,
        cap_active: bool = False,
    ) -> TraceRecord:
        """Advance the accumulators one plant step and emit the decision."""
        self.install_pending(t_now)
        cfg = self.config
        st = self.state
        freeze = cap_active and cfg.anti_windup_fcy
        if cfg.variant is Variant.FIXED_COSTATE_AND_THRESHOLD:
            st.window.append((measured.s, measured.E_kin + measured.E_b))
            while (len(st.window) > 2
                   and measured.s - st.window[1][0] >= cfg.delta_s_window):
                st.window.popleft()
            adj, err, spanned = self.energy_rate_feedback(measured)
            if spanned and not freeze:
                st.integral += err * ds / 1000.0
        else:
            adj, err = self.feedback_threshold(measured)
            if not freeze:
                st.integral += err * ds / 1000.0
        lam_at = float(np.interp(measured.s, st.coast.grid.nodes,
                                 st.coast.lambda_kin))
        v = measured.speed(self.params)
        coast = decide_signal(lam_at, adj, grip_limited, v, cfg.v_coast_min)
        st.last_signal = coast
        return TraceRecord(
            s=measured.s, t=t_now, variant=cfg.variant.value,
            lambda_kin_at_s=lam_at, lambda_star_adj=float(adj),
            error=float(err), coast_signal=coast, grip_limited=grip_limited,
        )
