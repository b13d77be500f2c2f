"""Tests for the space-domain conic plan: assembly, duals, robustification."""

import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stintopt import model, socp, track
from stintopt.errors import InfeasibleProblemError, ParamError

from conftest import corner_spans

NEUTRAL = track.GripState(1.0, 1.0, None)


def flat_track(length=800.0, step=5.0):
    s = np.arange(0.0, length + step / 2, step)
    zeros = np.zeros_like(s)
    return track.TrackProfile(s_lap=length, s=s, kappa=zeros, grade=zeros, pit_zones=())


def boundary_from(params, length, *, v0=30.0, e_b0=None, target=None):
    x0 = model.VehicleState(
        E_kin=0.5 * params.m_eq * v0**2,
        E_b=0.9 * params.E_b_max if e_b0 is None else e_b0,
        theta_m=320.0,
        theta_b=308.0,
    )
    return socp.StintBoundary(
        s0=0.0,
        S_stint=length,
        x0=x0,
        E_b_target=params.E_b_min if target is None else target,
        theta_b_target=params.theta_b_max,
    )


@pytest.fixture(scope="module")
def lap_instance():
    """One energy-limited lap of the nominal track, plus a 2x refined re-solve."""
    t = track.generate_synthetic_track(7, 5, 4100.0)
    p = model.default_params()
    b = boundary_from(p, 4100.0, v0=25.0, e_b0=0.5 * p.E_b_max,
                      target=0.5 * p.E_b_max - 16e6)
    g = track.build_grid(t, 0.0, 4100.0, mode="optimizer")
    plan = socp.solve(socp.build_problem(t, p, NEUTRAL, b, g))
    mids = []
    for a, c in zip(g.nodes[:-1], g.nodes[1:]):
        mids.append((a + c) / 2.0)
    fine = track.Grid(np.sort(np.concatenate([g.nodes, mids])))
    plan_fine = socp.solve(socp.build_problem(t, p, NEUTRAL, b, fine))
    return t, p, b, g, plan, fine, plan_fine


class TestBuildProblem:
    def test_counts_on_two_node_horizon(self):
        # hand count for n = 2 nodes, N = 1 interval:
        #   variables: 11 per node (E_kin, v, ell, F_m, F_brake, F_loss_m,
        #              F_dc, F_loss_b, E_b, theta_m, theta_b)        -> 22
        #   equalities: 4 dynamics rows (one per interval per state) +
        #              2 F_dc links (per node) + 4 initial pins      -> 10
        #   cones: speed, hyperbolic, motor loss, battery loss per node -> 8
        #   inequalities: 12 per node (P_max, P_regen, +/-F_m_max,
        #              F_brake both sides, E_kin cap+floor, E_b cap+floor,
        #              two temperature caps) + 2 terminal rows       -> 26
        t = flat_track(length=25.0, step=5.0)
        p = model.default_params()
        conic = socp.build_problem(
            t, p, NEUTRAL, boundary_from(p, 25.0), track.Grid(np.array([0.0, 25.0]))
        )
        assert conic.counts == {
            "variables": 22,
            "equalities": 10,
            "cone_memberships": 8,
            "inequalities": 26,
        }
        # recount independently from the assembled constraint objects
        assert sum(v.size for v in conic.variables.values()) == 22
        eq = ["ekin_dyn", "eb_dyn", "thm_dyn", "thb_dyn", "fdc_link", "init"]
        rows = 0
        for key in eq:
            c = conic.constraints[key]
            rows += sum(x.size for x in c) if isinstance(c, list) else c.size
        assert rows == 10
        cones = ["cone_speed", "cone_loss_m", "cone_loss_b"]
        memberships = sum(conic.constraints[k].size for k in cones)
        # one second-order cone per node; args[0] is the cone's t vector
        memberships += conic.constraints["cone_hyperbolic"].args[0].size
        assert memberships == 8
        ineq = sum(c.size for c in conic.constraints["limits"])
        ineq += sum(c.size for c in conic.constraints["terminal"])
        assert ineq == 26

    def test_constant_lethargy_gives_trapezoid_objective(self):
        # ell = 0.02 s/m over 100 m -> objective 2.0 s
        t = flat_track(length=100.0)
        p = model.default_params()
        g = track.build_grid(t, 0.0, 100.0, mode="optimizer")
        conic = socp.build_problem(t, p, NEUTRAL, boundary_from(p, 100.0), g)
        for name, var in conic.variables.items():
            var.value = np.zeros(var.size)
        conic.variables["lethargy"].value = np.full(5, 0.02 / socp.S_ELL)
        assert conic.problem.objective.expr.value == pytest.approx(2.0, abs=1e-5)

    def test_terminal_energy_above_capacity_rejected(self):
        t = flat_track()
        p = model.default_params()
        b = boundary_from(p, 800.0, target=p.E_b_max + 1.0)
        with pytest.raises(InfeasibleProblemError) as err:
            socp.build_problem(t, p, NEUTRAL, b, track.build_grid(t, 0.0, 800.0, mode="optimizer"))
        assert err.value.family == "terminal battery energy"

    def test_unreachable_terminal_energy_rejected(self):
        t = flat_track()
        p = model.default_params()
        b = boundary_from(p, 800.0, e_b0=20e6, target=120e6)
        with pytest.raises(InfeasibleProblemError) as err:
            socp.build_problem(t, p, NEUTRAL, b, track.build_grid(t, 0.0, 800.0, mode="optimizer"))
        assert err.value.family == "terminal battery energy"

    def test_grid_horizon_mismatch_rejected(self):
        t = flat_track()
        p = model.default_params()
        with pytest.raises(ParamError):
            socp.build_problem(
                t, p, NEUTRAL, boundary_from(p, 800.0), track.Grid(np.array([0.0, 400.0]))
            )

    def test_bad_lethargy_ref_rejected(self):
        t = flat_track(length=100.0)
        p = model.default_params()
        g = track.build_grid(t, 0.0, 100.0, mode="optimizer")
        with pytest.raises(ParamError):
            socp.build_problem(t, p, NEUTRAL, boundary_from(p, 100.0), g,
                               lethargy_ref=np.full(5, -0.01))
        with pytest.raises(ParamError):
            socp.build_problem(t, p, NEUTRAL, boundary_from(p, 100.0), g,
                               lethargy_ref=np.full(3, 0.02))


class TestSolve:
    def test_abundant_energy_straight_matches_full_throttle_sim(self):
        # independent oracle: march the exact model at full throttle on a
        # 1 m grid, clamping at the speed-cap bound, and compare profiles
        t = flat_track(length=800.0)
        p = model.default_params()
        grip = track.GripState(1.0, 1.0, 50.0)
        b = boundary_from(p, 800.0)
        g = track.build_grid(t, 0.0, 800.0, mode="optimizer")
        plan = socp.solve(socp.build_problem(t, p, grip, b, g))
        assert plan.status == "optimal"

        gs = track.build_grid(t, 0.0, 800.0, mode="simulation")
        e_cap = track.max_kinetic_energy(t, p, grip, gs)
        e_sim = np.empty(len(gs.nodes))
        e_sim[0] = b.x0.E_kin
        st_ = model.VehicleState(b.x0.E_kin, b.x0.E_b, 320.0, 308.0, 0.0, 0.0)
        prev = None
        for k in range(len(gs.nodes) - 1):
            v = st_.speed(p)
            u = model.ControlInput(F_m=min(p.F_m_max, p.P_max / v), F_brake=0.0, u_th=1.0)
            f = model.derivatives(st_, u, grip, p, 0.0)
            st_ = model.step_ab2(prev, f, st_, 1.0)
            if st_.E_kin > e_cap[k + 1]:
                st_ = dataclasses.replace(st_, E_kin=e_cap[k + 1])
            prev = f
            e_sim[k + 1] = st_.E_kin

        e_on_plan = np.interp(g.nodes, gs.nodes, e_sim)
        assert np.max(np.abs(plan.E_kin - e_on_plan) / e_on_plan) < 5e-3

        capped = plan.E_kin > 0.999 * track.max_kinetic_energy(t, p, grip, g)
        assert capped.sum() >= 10
        # marginal kinetic energy is worthless where the cap binds
        assert np.max(np.abs(plan.lambda_kin[capped])) < 1e-9

    def test_costate_nonpositive_within_tolerance(self, nominal_plan):
        assert np.all(nominal_plan.lambda_kin <= 1e-6)

    def test_energy_limited_plan_tapers_power_on_straights(self, lap_instance):
        t, p, b, g, plan, _, _ = lap_instance
        full = p.P_max * plan.lethargy
        frac = plan.F_m / np.maximum(full, 1e-9)
        straight = np.abs(track.kappa_at(t, g.nodes)) < 1e-6
        taper = straight & (frac > 0.05) & (frac < 0.95)
        assert taper.sum() > 20

    def test_relaxation_tightness_on_nominal(self, nominal_plan):
        assert nominal_plan.status == "optimal"
        assert nominal_plan.tight_fraction >= 0.99
        assert not nominal_plan.tightness_warning

    def test_costate_grid_independence_on_smooth_regions(self, lap_instance):
        _, _, _, g, plan, fine, plan_fine = lap_instance
        lam = plan.lambda_kin
        lam_f = np.interp(g.nodes, fine.nodes, plan_fine.lambda_kin)
        s = g.nodes
        grad = np.zeros(len(s))
        step = np.maximum((s[2:] - s[:-2]) / 2.0, 1e-9)
        grad[1:-1] = np.abs(lam[2:] - lam[:-2]) / np.maximum(2 * np.abs(lam[1:-1]), 1e-12) * (25.0 / step)
        # an alternating zigzag at tiny |lambda| has zero central difference,
        # so also require meaningful magnitude before calling a node smooth
        smooth = (
            (lam < -0.02 * np.abs(lam).max()) & (lam_f < -2e-8) & (grad < 0.1)
            & (s > 100.0) & (s < s[-1] - 100.0)
        )
        assert smooth.sum() >= 50
        rel = np.abs(lam_f[smooth] - lam[smooth]) / np.abs(lam[smooth])
        assert np.max(rel) <= 0.05

    def test_infeasible_cooling_diagnosed(self):
        t = flat_track()
        p = model.default_params()
        x0 = model.VehicleState(0.5 * p.m_eq * 900.0, 0.9 * p.E_b_max, 320.0, 320.0)
        b = socp.StintBoundary(0.0, 800.0, x0, p.E_b_min, p.theta_cool - 1.0)
        with pytest.raises(InfeasibleProblemError) as err:
            socp.build_problem(t, p, NEUTRAL, b, track.build_grid(t, 0.0, 800.0, mode="optimizer"))
        assert err.value.family == "terminal battery temperature"

    def test_infeasible_energy_floor_diagnosed(self):
        # short horizon, nearly empty battery, unatt ainable distance at P_aux
        t = flat_track(length=800.0)
        p = model.default_params()
        b = boundary_from(p, 800.0, v0=10.0, e_b0=p.E_b_min + 1e4,
                          target=p.E_b_min)
        with pytest.raises(InfeasibleProblemError) as err:
            socp.solve(socp.build_problem(
                t, p, NEUTRAL, b, track.build_grid(t, 0.0, 800.0, mode="optimizer")))
        assert err.value.family in ("battery energy floor", "terminal battery energy")

    def test_solution_dump_schema(self, nominal_plan, tmp_path):
        path = tmp_path / "plan.json"
        nominal_plan.dump_json(path)
        data = json.loads(path.read_text())
        for key in nominal_plan._ARRAY_FIELDS:
            assert len(data[key]) == len(nominal_plan.grid.nodes)
        assert data["grid"] == pytest.approx(nominal_plan.grid.nodes.tolist())
        assert data["status"] == "optimal"
        assert data["t_pred"] == pytest.approx(nominal_plan.t_pred)
        assert set(data["tightness"]) == {
            "hyperbolic_max", "speed_max", "tight_fraction", "warning",
        }


class TestRobustify:
    def test_flatten_hand_example(self):
        lam = np.array([-5.0, -3.0, -8.0, -2.0])
        out = socp.flatten_costate(lam, [0])
        assert out.tolist() == [-8.0, -8.0, -8.0, -2.0]

    def test_monotone_rise_after_apex_unchanged(self):
        lam = np.array([-5.0, -3.0, -2.0, -1.0])
        out = socp.flatten_costate(lam, [0])
        assert out.tolist() == lam.tolist()

    def test_no_apex_returns_input(self):
        e_kin = np.linspace(1e5, 5e5, 40)
        assert socp.detect_apexes(e_kin, np.linspace(0, 390, 40)) == []
        lam = -np.linspace(1.0, 2.0, 40)
        assert np.array_equal(socp.flatten_costate(lam, []), lam)

    @given(
        lam=st.lists(st.floats(-10.0, 0.0), min_size=4, max_size=40),
        seed=st.integers(0, 2**31 - 1),
    )
    @settings(max_examples=60, deadline=None)
    def test_flatten_never_raises_values(self, lam, seed):
        lam = np.asarray(lam)
        rng = np.random.default_rng(seed)
        n_apex = int(rng.integers(1, max(2, len(lam) // 2)))
        apexes = sorted(rng.choice(len(lam), size=n_apex, replace=False).tolist())
        out = socp.flatten_costate(lam, apexes)
        assert np.all(out <= lam + 1e-12)
        # flattened values are existing samples, not inventions
        assert set(np.round(out, 12)) <= set(np.round(lam, 12))

    def test_apexes_sit_inside_corners(self, nominal_plan, nominal_track, nominal_grid):
        apexes = socp.detect_apexes(nominal_plan.E_kin, nominal_grid.nodes)
        assert len(apexes) > 0
        spans = corner_spans(nominal_track)
        pos = np.mod(nominal_grid.nodes[apexes], nominal_track.s_lap)
        for x in pos:
            assert any(lo - 10.0 <= x <= hi + 10.0 for lo, hi in spans)

    def test_robustified_never_exceeds_original(self, nominal_plan, nominal_track, nominal_grid):
        out = socp.robustify_costate(nominal_plan, nominal_track, nominal_grid)
        assert np.all(out <= nominal_plan.lambda_kin + 1e-15)
