"""Tests for the live session plant loop and its WebSocket protocol."""

import json
import threading
import time

import numpy as np
import pytest
from websockets.sync.client import connect

from stintopt import cli, model, serve, track
from stintopt.controller import Variant
from stintopt.serve import CommandError, LiveSession

LAPS = 3
E_B0 = 0.98 * 165e6


@pytest.fixture(scope="module")
def run_config(tmp_path_factory, nominal_track, nominal_params):
    d = tmp_path_factory.mktemp("serve")
    track.save_track_csv(nominal_track, d / "track.csv")
    model.save_params_json(nominal_params, d / "vehicle.json")
    body = {
        "track_csv": "track.csv",
        "vehicle_json": "vehicle.json",
        "boundary": {"n_laps": LAPS, "E_b_target": E_B0 - LAPS * 13.8e6},
        "controller": {"variant": "fixed_costate"},
        "scenario": "none",
        "out_dir": str(d / "out"),
        "seed": 0,
    }
    (d / "run.json").write_text(json.dumps(body))
    return cli.load_config(d / "run.json")


@pytest.fixture(scope="module")
def runtime(run_config):
    return serve.build_runtime(run_config)


def cmd(**fields):
    return {"type": "command", **fields}


class TestLiveSession:
    def test_stepping_advances_monotonically(self, runtime):
        s = LiveSession(runtime)
        positions = []
        for _ in range(400):
            s.step()
            positions.append(s.st.s)
        assert np.all(np.diff(positions) > 0)
        assert s.st.t > 0
        frame = s.frame()
        assert frame["type"] == "telemetry"
        assert frame["v"] == pytest.approx(
            np.sqrt(2 * s.st.E_kin / runtime.params.m_eq))

    def test_pause_toggles(self, runtime):
        s = LiveSession(runtime)
        (ev,) = s.apply_command(cmd(pause=True))
        assert s.paused and ev["event"] == "paused"
        (ev,) = s.apply_command(cmd(pause=False))
        assert not s.paused and ev["event"] == "resumed"

    def test_fcy_trigger_caps_the_next_lap(self, runtime):
        s = LiveSession(runtime)
        for _ in range(50):
            s.step()
        (ev,) = s.apply_command(cmd(trigger="fcy"))
        assert ev["event"] == "scenario_triggered"
        assert s.scenario.name == "full_course_yellow"
        lap2 = (s.nodes >= 4100.0) & (s.nodes < 8200.0)
        assert s.cap_on[lap2].all()
        assert not s.cap_on[~lap2].any()

    def test_fcy_without_a_full_lap_left_is_rejected(self, runtime):
        s = LiveSession(runtime)
        n = len(s.nodes)
        s.k = n - 200
        s.st = model.VehicleState(s.st.E_kin, s.st.E_b, s.st.theta_m,
                                  s.st.theta_b, s=float(s.nodes[s.k]),
                                  t=500.0)
        with pytest.raises(CommandError, match="no full lap"):
            s.apply_command(cmd(trigger="fcy"))

    def test_drafting_trigger_composes(self, runtime):
        s = LiveSession(runtime)
        s.apply_command(cmd(trigger="fcy"))
        s.apply_command(cmd(trigger="drafting"))
        assert s.scenario.name == "composite"
        assert (s.aero < 1.0).any() and np.isfinite(s.v_cap).any()

    def test_driver_override_and_reset(self, runtime):
        s = LiveSession(runtime)
        for _ in range(20):
            s.step()
        (ev,) = s.apply_command(cmd(driver_override="throttle", value=0))
        assert s.driver_mode == "external" and ev["throttle"] == 0
        before = s.st.E_kin
        for _ in range(40):
            s.step()
        frame = s.frame()
        assert frame["driver"] == "external"
        assert s.st.E_kin < before  # human lifted, car sheds speed
        assert frame["coast"] or frame["grip_limited"]
        (ev,) = s.apply_command(cmd(reset=True))
        assert ev["event"] == "reset"
        assert s.driver_mode == "automated"
        assert s.k == 0 and s.st.s == 0.0

    def test_coast_ack_follows_the_signal(self, runtime):
        s = LiveSession(runtime)
        s.apply_command(cmd(driver_override="coast_ack"))
        assert s.driver_mode == "external"
        assert s.human_throttle == 1  # no coast signal yet at stint start

    def test_set_variant_and_map(self, runtime):
        s = LiveSession(runtime)
        (ev,) = s.apply_command(cmd(set_variant="fully_online"))
        assert ev["variant"] == "fully_online"
        assert s.cfg.variant is Variant.FULLY_ONLINE
        (ev,) = s.apply_command(cmd(set_map=2))
        assert ev["map"] == 2 and s.cfg.active_map == 2
        with pytest.raises(CommandError, match="unknown map"):
            s.apply_command(cmd(set_map=99))
        with pytest.raises(CommandError, match="unknown variant"):
            s.apply_command(cmd(set_variant="psychic"))

    def test_command_needs_exactly_one_action(self, runtime):
        s = LiveSession(runtime)
        with pytest.raises(CommandError, match="exactly one"):
            s.apply_command(cmd())
        with pytest.raises(CommandError, match="exactly one"):
            s.apply_command(cmd(pause=True, reset=True))

    def test_completed_session_reports_stint(self, runtime):
        s = LiveSession(runtime)
        events = []
        while not s.done:
            events.extend(s.step())
        names = [e["event"] for e in events]
        assert "stint_complete" in names
        final = [e for e in events if e["event"] == "stint_complete"][0]
        assert final["t_stint"] > 0
        assert s.frame()["done"]
        # plan updates were installed along the way under the 30 s cadence
        assert "plan_updated" in names


@pytest.fixture(scope="module")
def server(run_config):
    stop = threading.Event()
    ports: list[int] = []
    got_port = threading.Event()

    def ready(p):
        ports.append(p)
        got_port.set()

    th = threading.Thread(
        target=serve.run_server,
        args=(run_config, 0, 60.0),
        kwargs={"ready_cb": ready, "stop": stop},
        daemon=True,
    )
    th.start()
    assert got_port.wait(timeout=120), "server did not come up"
    yield ports[0]
    stop.set()
    th.join(timeout=10)


def recv_msg(ws, timeout=10.0):
    return json.loads(ws.recv(timeout=timeout))


def recv_until(ws, pred, timeout=20.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        msg = recv_msg(ws, timeout=max(0.1, deadline - time.monotonic()))
        if pred(msg):
            return msg
    raise AssertionError("expected message never arrived")


class TestServeProtocol:
    def test_hello_then_strictly_increasing_telemetry(self, server):
        with connect(f"ws://127.0.0.1:{server}") as ws:
            hello = recv_msg(ws)
            assert hello["type"] == "hello"
            assert len(hello["maps"]) == 3
            assert len(hello["costate"]) > 100
            assert hello["timescale"] == 60.0
            frames = []
            while len(frames) < 8:
                msg = recv_msg(ws)
                if msg["type"] == "telemetry":
                    frames.append(msg)
            s = [f["s"] for f in frames]
            assert all(b > a for a, b in zip(s, s[1:]))

    def test_pause_halts_stream_within_one_frame(self, server):
        with connect(f"ws://127.0.0.1:{server}") as ws:
            recv_msg(ws)
            ws.send(json.dumps(cmd(pause=True)))
            recv_until(ws, lambda m: m.get("event") == "paused")
            grace = 0  # one in-flight frame may still be queued
            try:
                while True:
                    msg = recv_msg(ws, timeout=0.35)
                    if msg["type"] == "telemetry":
                        grace += 1
            except TimeoutError:
                pass
            assert grace <= 1
            ws.send(json.dumps(cmd(pause=False)))
            recv_until(ws, lambda m: m["type"] == "telemetry")

    def test_fcy_trigger_caps_speed_next_lap(self, server):
        with connect(f"ws://127.0.0.1:{server}") as ws:
            recv_msg(ws)
            ws.send(json.dumps(cmd(trigger="fcy")))
            recv_until(ws, lambda m: m.get("event") == "scenario_triggered")
            capped = recv_until(
                ws, lambda m: m["type"] == "telemetry" and m["cap_active"],
                timeout=60.0)
            assert capped["lap"] == 2
            slow = recv_until(
                ws, lambda m: m["type"] == "telemetry"
                and m["cap_active"] and m["v"] <= 80.0 / 3.6 + 0.1,
                timeout=60.0)
            assert slow["scenario"] == "full_course_yellow"

    def test_driver_override_marks_driver_coast(self, server):
        with connect(f"ws://127.0.0.1:{server}") as ws:
            recv_msg(ws)
            ws.send(json.dumps(cmd(driver_override="throttle", value=0)))
            marked = recv_until(
                ws, lambda m: m["type"] == "telemetry"
                and m["driver"] == "external" and m["coast"],
                timeout=30.0)
            assert marked["driver_coast"] or marked["coast_signal"]

    def test_malformed_input_yields_error_and_session_survives(self, server):
        with connect(f"ws://127.0.0.1:{server}") as ws:
            recv_msg(ws)
            ws.send("this is not json")
            err = recv_until(ws, lambda m: m["type"] == "error")
            assert "command" in err["message"] or "Expecting" in err["message"]
            ws.send(json.dumps({"type": "command", "reset": True,
                                "pause": True}))
            err2 = recv_until(ws, lambda m: m["type"] == "error")
            assert "exactly one" in err2["message"]
            recv_until(ws, lambda m: m["type"] == "telemetry")
