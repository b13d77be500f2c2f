"""Live closed-loop session over a JSON-lines WebSocket.

One connection gets one session: a pacer coroutine advances the plant at
a configurable multiple of wall-clock time and emits ``telemetry`` frames
at ten per second plus ``event`` messages (plan installs, FCY start/end,
violations).  Inbound ``command`` messages are queued by a reader
coroutine and applied only between plant steps, so a step never sees a
half-applied mutation.  Long re-plan solves run on a worker thread; the
controller installs the result at its simulated delivery time exactly as
in the offline harness.

Wire protocol: one JSON object per message, ``type`` mandatory.
Outbound types: hello, telemetry, event, error.  Inbound: command, with
exactly one action field (set_variant, trigger, set_map,
driver_override, pause, reset).
"""

from __future__ import annotations

import asyncio
import json
import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .controller import Controller, ControllerConfig, Variant
from .errors import (
    BrakingInfeasibleError,
    InfeasibleProblemError,
    ParamError,
    StallError,
    StintOptError,
)
from .harness import DisturbanceScenario
from .liftcoast import CoastPlan
from .model import (
    G,
    ControlInput,
    VehicleParams,
    VehicleState,
    braking_envelope,
    derivatives,
    invert_for_bound,
    step_ab2,
)
from .socp import PlanSolution, StintBoundary
from .track import (
    GripState,
    TrackProfile,
    build_grid,
    grade_at,
    max_kinetic_energy_arrays,
)

FRAME_WALL = 0.1          # [s] wall clock per telemetry frame
COSTATE_STRIDE = 20       # hello-message co-state downsampling
TRIGGERS = ("drafting", "fcy", "degradation")


class CommandError(StintOptError):
    """Inbound command rejected; the session keeps running."""


@dataclass(frozen=True)
class SessionRuntime:
    """Shared offline artifacts every connection starts from."""

    track: TrackProfile
    params: VehicleParams
    boundary: StintBoundary
    plan: PlanSolution
    coast: CoastPlan
    scenario: DisturbanceScenario
    config: ControllerConfig
    config_hash: str


class LiveSession:
    """Steppable closed loop with runtime scenario and driver mutation.

    Mirrors the harness plant march one node at a time; the extra moving
    parts are live disturbance triggers (profiles rebuilt between steps),
    an external driver mode where throttle comes from inbound commands,
    and re-plan solves that may be handed to a worker thread.
    """

    def __init__(self, rt: SessionRuntime):
        self.rt = rt
        self.cfg = rt.config
        self.paused = False
        self.pending_commands: deque[dict] = deque()
        self._submit = None    # set by the server: run a solve off-loop
        self._solving = None
        self._reset_state()

    # -- lifecycle ------------------------------------------------------

    def _reset_state(self) -> None:
        rt = self.rt
        self.scenario = rt.scenario
        self.driver_mode = "automated"
        self.human_throttle = 1
        self.grid = build_grid(rt.track, rt.boundary.s0, rt.boundary.S_stint,
                               mode="simulation")
        self.nodes = self.grid.nodes
        self.grade = grade_at(rt.track, self.nodes)
        self._apply_scenario()
        self.ctl = Controller(self.cfg, rt.plan, rt.coast, rt.boundary,
                              rt.track, rt.params, GripState(1.0, 1.0, None))
        self._params_map = replace(rt.params,
                                   P_max=min(rt.params.P_max,
                                             self.ctl._map_power()))
        x0 = rt.boundary.x0
        self.st = VehicleState(min(x0.E_kin, float(self.env[0])), x0.E_b,
                               x0.theta_m, x0.theta_b,
                               s=float(self.nodes[0]), t=0.0)
        self.k = 0
        self.prev_f = None
        self.done = False
        self.next_mpc = self.cfg.mpc_period
        self.violations: list[str] = []
        self._last_plan_time = self.ctl.state.plan_time
        self._last_rec = None
        self._last_coast = False
        self._last_driver_coast = False
        self._last_clamped = False

    def _apply_scenario(self) -> None:
        rt = self.rt
        self.mu, self.aero, self.v_cap = self.scenario.profiles(
            self.nodes, rt.track.s_lap, rt.boundary.s0, rt.boundary.S_stint)
        self.e_kin_max = max_kinetic_energy_arrays(
            rt.track, rt.params, self.grid, self.mu, self.aero, self.v_cap)
        self.env = braking_envelope(rt.track, GripState(1.0, 1.0, None),
                                    rt.params, self.grid,
                                    e_kin_max=self.e_kin_max,
                                    aero_scale_nodes=self.aero)
        self.cap_on = np.isfinite(self.v_cap)

    def _rebuild_controller(self) -> None:
        rt = self.rt
        self.ctl = Controller(self.cfg, rt.plan, rt.coast, rt.boundary,
                              rt.track, rt.params, GripState(1.0, 1.0, None))
        self._params_map = replace(rt.params,
                                   P_max=min(rt.params.P_max,
                                             self.ctl._map_power()))
        self.next_mpc = self.st.t + self.cfg.mpc_period
        self._last_plan_time = self.ctl.state.plan_time

    # -- commands ---------------------------------------------------------

    def apply_command(self, cmd: dict) -> list[dict]:
        """Apply one inbound command; returns the events it produced."""
        actions = [k for k in ("set_variant", "trigger", "set_map",
                               "driver_override", "pause", "reset")
                   if k in cmd]
        if len(actions) != 1:
            raise CommandError("command needs exactly one action field")
        action = actions[0]
        return getattr(self, f"_cmd_{action}")(cmd[action], cmd)

    def _cmd_set_variant(self, value, _cmd) -> list[dict]:
        try:
            variant = Variant(value)
        except ValueError:
            raise CommandError(f"unknown variant {value!r}") from None
        self.cfg = replace(self.cfg, variant=variant)
        self._rebuild_controller()
        return [self._event("variant_changed", variant=variant.value)]

    def _cmd_set_map(self, value, _cmd) -> list[dict]:
        ids = [m.id for m in self.rt.coast.maps]
        if value not in ids:
            raise CommandError(f"unknown map {value!r}; have {ids}")
        self.cfg = replace(self.cfg, active_map=int(value))
        try:
            self._rebuild_controller()
        except (InfeasibleProblemError, ParamError) as err:
            raise CommandError(str(err)) from None
        return [self._event("map_changed", map=int(value))]

    def _cmd_trigger(self, value, _cmd) -> list[dict]:
        rt = self.rt
        s_now = self.st.s
        if value == "drafting":
            part = DisturbanceScenario.drafting(
                window=(s_now, s_now + rt.track.s_lap))
        elif value == "degradation":
            part = DisturbanceScenario.tire_degradation()
        elif value == "fcy":
            lap = int((s_now - rt.boundary.s0) // rt.track.s_lap) + 2
            if lap * rt.track.s_lap > rt.boundary.S_stint:
                raise CommandError("no full lap left for a course yellow")
            part = DisturbanceScenario.full_course_yellow(lap=lap)
        else:
            raise CommandError(f"unknown trigger {value!r}; "
                               f"expected one of {TRIGGERS}")
        if self.scenario.kind.value == "none":
            self.scenario = part
        else:
            self.scenario = DisturbanceScenario.composite(self.scenario, part)
        self._apply_scenario()
        return [self._event("scenario_triggered", trigger=value,
                            scenario=self.scenario.name)]

    def _cmd_driver_override(self, value, cmd) -> list[dict]:
        if value == "throttle":
            throttle = cmd.get("value")
            if throttle not in (0, 1):
                raise CommandError("driver_override throttle needs value 0/1")
            self.driver_mode = "external"
            self.human_throttle = int(throttle)
        elif value == "coast_ack":
            self.driver_mode = "external"
            self.human_throttle = 0 if self._signal_now() else 1
        else:
            raise CommandError("driver_override must be throttle or coast_ack")
        return [self._event("driver_override", mode=self.driver_mode,
                            throttle=self.human_throttle)]

    def _cmd_pause(self, value, _cmd) -> list[dict]:
        self.paused = bool(value)
        return [self._event("paused" if self.paused else "resumed")]

    def _cmd_reset(self, _value, _cmd) -> list[dict]:
        self._reset_state()
        return [self._event("reset")]

    def _signal_now(self) -> bool:
        return bool(self._last_rec.coast_signal) if self._last_rec else False

    # -- stepping ---------------------------------------------------------

    def step(self) -> list[dict]:
        """Advance one node; returns events raised by this step."""
        if self.done:
            return []
        rt, params = self.rt, self.rt.params
        events: list[dict] = []
        k, st = self.k, self.st
        nodes = self.nodes
        if k >= len(nodes) - 1:
            return self._finish(events)
        h = float(nodes[k + 1] - nodes[k])
        gk = GripState(float(self.mu[k]), float(self.aero[k]), None)
        grd = float(self.grade[k])

        if (st.t >= self.next_mpc
                and self.cfg.variant is not Variant.FIXED_COSTATE_AND_THRESHOLD):
            self._launch_replan()
            self.next_mpc += self.cfg.mpc_period

        ell = math.sqrt(params.m_eq / (2.0 * st.E_kin))
        p_full = self.ctl._map_power()
        f_full = min(params.F_m_max, p_full * ell)
        w1, w0 = (1.0, 0.0) if self.prev_f is None else (1.5, -0.5)
        de_flat = f_full - gk.aero_scale * params.rho_cd_A / params.m_eq * st.E_kin \
            - (params.c_r * params.m * G * math.cos(grd) + params.m * G * math.sin(grd))
        e_flat = st.E_kin + h * (w1 * de_flat
                                 + w0 * (self.prev_f.dE_kin if self.prev_f else 0.0))
        gl_pred = e_flat > self.env[k + 1] + 1e-9

        rec = self.ctl.step(st, grip_limited=bool(gl_pred), t_now=float(st.t),
                            ds=h, cap_active=bool(self.cap_on[k]))
        self._last_rec = rec
        if self.ctl.state.plan_time != self._last_plan_time:
            self._last_plan_time = self.ctl.state.plan_time
            events.append(self._event(
                "plan_updated", lambda_star=self.ctl.state.lambda_star))

        if self.driver_mode == "external":
            want_coast = self.human_throttle == 0
        else:
            want_coast = rec.coast_signal
        self._last_driver_coast = want_coast and not rec.coast_signal

        try:
            if want_coast and not gl_pred:
                inp = ControlInput(0.0, 0.0, 0.0)
            else:
                inp = ControlInput(f_full, 0.0, 1.0)
            f = derivatives(st, inp, gk, params, grd)
            e_next = st.E_kin + h * (w1 * f.dE_kin
                                     + w0 * (self.prev_f.dE_kin if self.prev_f else 0.0))
            clamped = e_next > self.env[k + 1] + 1e-9
            if clamped:
                inp = invert_for_bound(st, float(self.env[k + 1]), self.prev_f,
                                       h, self._params_map, gk, grd)
                f = derivatives(st, inp, gk, params, grd)
            nxt = step_ab2(self.prev_f, f, st, h)
        except (StallError, BrakingInfeasibleError) as err:
            return self._abort(f"{type(err).__name__} at s={nodes[k]:.0f}: {err}",
                               events)

        self._last_coast = bool(want_coast and not gl_pred and not clamped)
        self._last_clamped = bool(clamped or gl_pred)
        was_capped = bool(self.cap_on[k])
        self.k = k + 1
        self.prev_f = f
        self.st = VehicleState(nxt.E_kin, nxt.E_b, nxt.theta_m, nxt.theta_b,
                               s=float(nodes[self.k]), t=float(nxt.t))
        if bool(self.cap_on[self.k]) and not was_capped:
            events.append(self._event("fcy_start"))
        elif was_capped and not bool(self.cap_on[self.k]):
            events.append(self._event("fcy_end"))

        if nxt.E_kin <= 0:
            return self._abort(f"stalled at s={nodes[self.k]:.0f}", events)
        if nxt.E_b < params.E_b_min:
            return self._abort(f"battery depleted at s={nodes[self.k]:.0f}",
                               events)
        for name, val, lim in (("theta_m", nxt.theta_m, params.theta_m_max),
                               ("theta_b", nxt.theta_b, params.theta_b_max)):
            msg = f"{name} exceeded {lim:.0f} K"
            if val > lim + 1e-6 and not any(msg in v for v in self.violations):
                self.violations.append(msg)
                events.append(self._event("violation", message=msg))
        if self.k >= len(nodes) - 1:
            return self._finish(events)
        return events

    def _launch_replan(self) -> None:
        st, t = self.st, float(self.st.t)
        if self._submit is None:
            self.ctl.mpc_update(st, t_now=t)
        elif self._solving is None or self._solving.done():
            self._solving = self._submit(
                lambda: self.ctl.mpc_update(st, t_now=t))

    def _abort(self, message: str, events: list[dict]) -> list[dict]:
        self.violations.append(message)
        self.done = True
        events.append(self._event("violation", message=message))
        events.append(self._event("aborted", s=self.st.s))
        return events

    def _finish(self, events: list[dict]) -> list[dict]:
        self.done = True
        events.append(self._event(
            "stint_complete", t_stint=float(self.st.t),
            E_b=float(self.st.E_b), violations=list(self.violations)))
        return events

    # -- messages ---------------------------------------------------------

    def _event(self, name: str, **fields) -> dict:
        return {"type": "event", "event": name, "s": float(self.st.s),
                "t": float(self.st.t), **fields}

    def hello(self, timescale: float) -> dict:
        rt = self.rt
        lam = rt.coast.lambda_kin[::COSTATE_STRIDE]
        s = rt.coast.grid.nodes[::COSTATE_STRIDE]
        return {
            "type": "hello",
            "config_hash": rt.config_hash,
            "s_lap": rt.track.s_lap,
            "S_stint": rt.boundary.S_stint,
            "n_laps": int(round(rt.boundary.S_stint / rt.track.s_lap)),
            "E_b_max": rt.params.E_b_max,
            "theta_m_max": rt.params.theta_m_max,
            "theta_b_max": rt.params.theta_b_max,
            "E_b_target": rt.boundary.E_b_target,
            "maps": [{"id": m.id, "P_full": m.P_full} for m in rt.coast.maps],
            "variant": self.cfg.variant.value,
            "scenario": self.scenario.name,
            "timescale": timescale,
            "costate": [[float(a), float(b)] for a, b in zip(s, lam)],
            "lambda_star": float(self.ctl.state.lambda_star),
        }

    def frame(self) -> dict:
        st, params = self.st, self.rt.params
        rec = self._last_rec
        return {
            "type": "telemetry",
            "s": float(st.s),
            "t": float(st.t),
            "lap": int((st.s - self.rt.boundary.s0) // self.rt.track.s_lap) + 1,
            "v": math.sqrt(2.0 * st.E_kin / params.m_eq),
            "E_kin": float(st.E_kin),
            "E_b": float(st.E_b),
            "theta_m": float(st.theta_m),
            "theta_b": float(st.theta_b),
            "coast": self._last_coast,
            "coast_signal": bool(rec.coast_signal) if rec else False,
            "grip_limited": self._last_clamped,
            "cap_active": bool(self.cap_on[min(self.k, len(self.cap_on) - 1)]),
            "lambda_kin": float(rec.lambda_kin_at_s) if rec else 0.0,
            "lambda_star_adj": float(rec.lambda_star_adj) if rec else 0.0,
            "scenario": self.scenario.name,
            "variant": self.cfg.variant.value,
            "map": self.cfg.active_map,
            "driver": self.driver_mode,
            "driver_coast": self._last_driver_coast,
            "paused": self.paused,
            "done": self.done,
        }


async def _handle(ws, rt: SessionRuntime, timescale: float) -> None:
    session = LiveSession(rt)
    loop = asyncio.get_running_loop()
    session._submit = lambda fn: loop.run_in_executor(None, fn)
    outq: asyncio.Queue = asyncio.Queue()
    await ws.send(json.dumps(session.hello(timescale), sort_keys=True))

    async def reader():
        async for raw in ws:
            try:
                msg = json.loads(raw)
                if not isinstance(msg, dict) or msg.get("type") != "command":
                    raise ValueError("expected a command message")
            except (json.JSONDecodeError, ValueError) as err:
                await outq.put({"type": "error", "message": str(err)})
                continue
            session.pending_commands.append(msg)

    async def writer():
        while True:
            await ws.send(json.dumps(await outq.get(), sort_keys=True))

    async def pacer():
        last_emitted_k = -1
        while True:
            t0 = loop.time()
            events: list[dict] = []
            while session.pending_commands:
                cmd = session.pending_commands.popleft()
                try:
                    events.extend(session.apply_command(cmd))
                except CommandError as err:
                    events.append({"type": "error", "message": str(err)})
            if not session.paused and not session.done:
                t_target = session.st.t + FRAME_WALL * timescale
                while session.st.t < t_target and not session.done:
                    events.extend(session.step())
                if session.k != last_emitted_k:
                    last_emitted_k = session.k
                    await outq.put(session.frame())
            elif session.done and last_emitted_k != -2:
                last_emitted_k = -2  # emit the terminal frame exactly once
                await outq.put(session.frame())
            for ev in events:
                await outq.put(ev)
            await asyncio.sleep(max(0.01, FRAME_WALL - (loop.time() - t0)))

    tasks = [asyncio.create_task(c()) for c in (reader, writer, pacer)]
    try:
        done, _ = await asyncio.wait(tasks,
                                     return_when=asyncio.FIRST_COMPLETED)
        for t in done:
            t.result()
    finally:
        for t in tasks:
            t.cancel()


def build_runtime(config) -> SessionRuntime:
    """Solve the offline artifacts one time for all connections."""
    from .cli import _load_bundle, _solve_coast, _solve_plan, parse_scenario

    bundle = _load_bundle(config)
    plan = _solve_plan(bundle)
    coast = _solve_coast(bundle, plan)
    return SessionRuntime(
        track=bundle.track, params=bundle.params, boundary=bundle.boundary,
        plan=plan, coast=coast, scenario=parse_scenario(config.scenario),
        config=ControllerConfig(**config.controller),
        config_hash=config.config_hash,
    )


def run_server(config, port: int, timescale: float = 5.0,
               ready_cb=None, stop=None) -> None:
    """Serve live sessions until stopped (blocking).

    ``ready_cb`` receives the bound port once listening; ``stop`` is an
    optional ``threading.Event`` polled for shutdown, for embedding the
    server in tests.
    """
    asyncio.run(_main(config, port, timescale, ready_cb, stop))


async def _main(config, port, timescale, ready_cb, stop) -> None:
    from websockets.asyncio.server import serve

    rt = build_runtime(config)

    async def handler(ws):
        try:
            await _handle(ws, rt, timescale)
        except Exception:  # connection torn down; server keeps serving
            pass

    async with serve(handler, "127.0.0.1", port) as server:
        if ready_cb is not None:
            ready_cb(server.sockets[0].getsockname()[1])
        if stop is None:
            await asyncio.get_running_loop().create_future()
        else:
            while not stop.is_set():
                await asyncio.sleep(0.05)
