"""Track geometry, grids and the grip-limited kinetic energy bound."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stintopt import model, track
from stintopt.errors import TrackError


def flat_track(s_lap=1000.0, ds=2.0, kappa_fn=None):
    s = np.arange(0.0, s_lap + 1e-9, ds)
    kappa = np.zeros_like(s) if kappa_fn is None else kappa_fn(s)
    return track.TrackProfile(s_lap=s_lap, s=s, kappa=kappa, grade=np.zeros_like(s))


def hairpin_track():
    return flat_track(kappa_fn=lambda s: np.where((s >= 400) & (s <= 450), 0.05, 0.0))


class TestTrackProfile:
    def test_rejects_non_increasing_s(self):
        s = np.array([0.0, 2.0, 2.0, 6.0])
        with pytest.raises(TrackError):
            track.TrackProfile(s_lap=6.0, s=s, kappa=np.zeros(4), grade=np.zeros(4))

    def test_rejects_short_span(self):
        s = np.arange(0.0, 500.0, 2.0)
        with pytest.raises(TrackError):
            track.TrackProfile(s_lap=1000.0, s=s, kappa=np.zeros_like(s), grade=np.zeros_like(s))

    def test_rejects_nan(self):
        t = flat_track()
        kappa = t.kappa.copy()
        kappa[3] = np.nan
        with pytest.raises(TrackError):
            track.TrackProfile(s_lap=t.s_lap, s=t.s, kappa=kappa, grade=t.grade)

    def test_periodic_lookup(self):
        t = hairpin_track()
        s = np.array([425.0, 425.0 + 1000.0, 425.0 + 3000.0])
        np.testing.assert_allclose(track.kappa_at(t, s), 0.05)
        assert track.kappa_at(t, np.array([100.0]))[0] == 0.0

    def test_pit_zone_limit(self):
        zone = track.PitZone(s_start=100.0, s_end=200.0, v_limit=16.67)
        t = flat_track()
        t = track.TrackProfile(
            s_lap=t.s_lap, s=t.s, kappa=t.kappa, grade=t.grade, pit_zones=(zone,)
        )
        lim = track.pit_speed_limit(t, np.array([150.0, 150.0 + 1000.0, 50.0]))
        assert lim[0] == lim[1] == 16.67  # applies every lap
        assert np.isinf(lim[2])


class TestGripState:
    def test_defaults_neutral(self):
        g = track.GripState()
        assert g.mu_scale == 1.0 and g.aero_scale == 1.0 and g.v_cap is None

    @pytest.mark.parametrize("bad", [{"mu_scale": 0.0}, {"mu_scale": 1.6}, {"aero_scale": -0.1}])
    def test_rejects_out_of_range(self, bad):
        with pytest.raises(TrackError):
            track.GripState(**bad)


class TestBuildGrid:
    def test_straight_only_steps(self):
        # zero curvature everywhere: 100 m at the coarse step is 4 intervals
        t = flat_track()
        g = track.build_grid(t, 0.0, 100.0, mode="optimizer")
        np.testing.assert_allclose(g.nodes, [0.0, 25.0, 50.0, 75.0, 100.0])

    def test_simulation_grid_one_meter(self):
        t = flat_track()
        g = track.build_grid(t, 0.0, 100.0, mode="simulation")
        assert g.n_intervals == 100
        np.testing.assert_allclose(g.steps, 1.0)

    def test_hairpin_node_count_matches_independent_scan(self):
        # frozen from a brute-force scan using analytic distance-to-corner
        g = track.build_grid(hairpin_track(), 0.0, 1000.0, mode="optimizer")
        assert len(g.nodes) == 53
        inside = (g.nodes >= 405) & (g.nodes <= 445)
        np.testing.assert_allclose(g.steps[inside[:-1]], 5.0)
        far = (g.nodes < 300) & (g.nodes > 100)
        np.testing.assert_allclose(g.steps[far[:-1]], 25.0)

    def test_endpoints_exact(self):
        g = track.build_grid(hairpin_track(), 123.0, 2077.0, mode="optimizer")
        assert g.nodes[0] == 123.0 and g.nodes[-1] == 2077.0

    def test_rejects_bad_horizon(self):
        with pytest.raises(TrackError):
            track.build_grid(flat_track(), 100.0, 100.0, mode="optimizer")

    def test_rejects_coarse_sampling(self):
        t = flat_track(ds=8.0)
        with pytest.raises(TrackError):
            track.build_grid(t, 0.0, 100.0, mode="optimizer")

    @given(s0=st.floats(0.0, 500.0), length=st.floats(40.0, 3000.0))
    @settings(max_examples=25, deadline=None)
    def test_grid_monotone_any_horizon(self, s0, length):
        g = track.build_grid(hairpin_track(), s0, s0 + length, mode="optimizer")
        assert np.all(np.diff(g.nodes) > 0)
        assert g.nodes[0] == s0
        assert abs(g.nodes[-1] - (s0 + length)) < 1e-9
        assert g.steps.max() <= track.STEP_STRAIGHT + 0.5 * track.STEP_CORNER + 1e-9


def params_no_downforce():
    base = model.default_params()
    return model.VehicleParams(
        **{
            **{f: getattr(base, f) for f in base.__dataclass_fields__},
            "m_eq": 1000.0,
            "m": 1000.0,
            "rho_cl_A": 1e-12,
            "mu0": 1.5,
            "v_max_straight": 150.0,
        }
    )


class TestMaxKineticEnergy:
    def test_hand_evaluated_lateral_limit(self):
        # kappa=0.05, mu=1.5, m=1000, g=9.81, no downforce:
        # v^2 = 1.5*9.81/0.05 = 294.3, E = 0.5*1000*294.3 = 147150 J
        t = flat_track(kappa_fn=lambda s: np.full_like(s, 0.05))
        p = params_no_downforce()
        g = track.build_grid(t, 0.0, 200.0, mode="optimizer")
        e = track.max_kinetic_energy(t, p, track.GripState(), g)
        np.testing.assert_allclose(e, 147150.0, rtol=1e-9)
        np.testing.assert_allclose(2 * e / p.m_eq, 294.3, rtol=1e-9)

    def test_straight_uses_cap(self):
        t = flat_track()
        p = params_no_downforce()
        g = track.build_grid(t, 0.0, 200.0, mode="optimizer")
        e = track.max_kinetic_energy(t, p, track.GripState(), g)
        np.testing.assert_allclose(e, 0.5 * p.m_eq * p.v_max_straight**2)

    def test_v_cap_limits_energy(self):
        # an 80 km/h cap pins the bound at ~2.469e5 J for m_eq = 1000 kg
        t = flat_track()
        p = params_no_downforce()
        g = track.build_grid(t, 0.0, 200.0, mode="optimizer")
        e = track.max_kinetic_energy(t, p, track.GripState(v_cap=80.0 / 3.6), g)
        np.testing.assert_allclose(e, 0.5 * 1000.0 * (80.0 / 3.6) ** 2)
        assert abs(e[0] - 2.469e5) / 2.469e5 < 1e-3

    def test_downforce_unbounded_corner_rejected(self):
        t = flat_track(kappa_fn=lambda s: np.full_like(s, 0.0055))
        base = model.default_params()
        p = model.VehicleParams(
            **{
                **{f: getattr(base, f) for f in base.__dataclass_fields__},
                "rho_cl_A": 8.0,
            }
        )
        g = track.build_grid(t, 0.0, 200.0, mode="optimizer")
        with pytest.raises(TrackError, match="downforce-unbounded corner"):
            track.max_kinetic_energy(t, p, track.GripState(), g)

    def test_gentle_curvature_is_flat_out(self):
        # below the corner threshold a closed denominator means no limit
        t = flat_track(kappa_fn=lambda s: np.full_like(s, 0.002))
        p = model.default_params()
        g = track.build_grid(t, 0.0, 200.0, mode="optimizer")
        e = track.max_kinetic_energy(t, p, track.GripState(), g)
        np.testing.assert_allclose(e, 0.5 * p.m_eq * p.v_max_straight**2)

    def test_pit_zone_caps_energy(self):
        zone = track.PitZone(s_start=0.0, s_end=1000.0, v_limit=20.0)
        t = flat_track()
        t = track.TrackProfile(
            s_lap=t.s_lap, s=t.s, kappa=t.kappa, grade=t.grade, pit_zones=(zone,)
        )
        p = params_no_downforce()
        g = track.build_grid(t, 0.0, 200.0, mode="optimizer")
        e = track.max_kinetic_energy(t, p, track.GripState(), g)
        np.testing.assert_allclose(e, 0.5 * p.m_eq * 20.0**2)

    @given(mu=st.floats(0.5, 1.0))
    @settings(max_examples=20, deadline=None)
    def test_lower_grip_never_raises_bound(self, mu):
        t = hairpin_track()
        p = model.default_params()
        g = track.build_grid(t, 0.0, 1000.0, mode="optimizer")
        nominal = track.max_kinetic_energy(t, p, track.GripState(), g)
        worn = track.max_kinetic_energy(t, p, track.GripState(mu_scale=mu), g)
        assert np.all(worn <= nominal + 1e-9)

    def test_reduced_aero_lowers_cornering_bound(self):
        t = hairpin_track()
        p = model.default_params()
        g = track.build_grid(t, 0.0, 1000.0, mode="optimizer")
        nominal = track.max_kinetic_energy(t, p, track.GripState(), g)
        drafting = track.max_kinetic_energy(t, p, track.GripState(aero_scale=0.9), g)
        corner = np.abs(track.kappa_at(t, g.nodes)) >= track.KAPPA_CORNER
        assert np.all(drafting[corner] < nominal[corner])
        assert np.all(drafting <= nominal + 1e-9)


class TestSyntheticTrack:
    def test_deterministic(self):
        a = track.generate_synthetic_track(11, 6, 3800.0)
        b = track.generate_synthetic_track(11, 6, 3800.0)
        np.testing.assert_array_equal(a.kappa, b.kappa)
        np.testing.assert_array_equal(a.s, b.s)

    def test_curvature_closes_the_lap(self):
        t = track.generate_synthetic_track(3, 5, 4100.0)
        assert abs(np.trapezoid(t.kappa, t.s) - 2 * np.pi) < 1e-6

    def test_corner_count(self):
        t = track.generate_synthetic_track(5, 7, 5000.0)
        corner = np.abs(t.kappa) >= track.KAPPA_CORNER
        # count rising edges of the corner mask
        rises = np.sum(corner[1:] & ~corner[:-1]) + (corner[0] & ~corner[-1])
        assert rises == 7

    def test_sampling_fine_enough(self):
        t = track.generate_synthetic_track(9, 4, 3000.0)
        assert np.max(np.diff(t.s)) <= track.MAX_SOURCE_SPACING + 1e-9

    def test_infeasible_geometry_rejected(self):
        with pytest.raises(TrackError):
            track.generate_synthetic_track(0, 40, 1200.0)


class TestCsvRoundTrip:
    def test_round_trip_bit_identical(self, tmp_path):
        t = track.generate_synthetic_track(2, 5, 4100.0)
        path = tmp_path / "lap.csv"
        track.save_track_csv(t, path)
        again = track.load_track_csv(path)
        np.testing.assert_array_equal(t.s, again.s)
        np.testing.assert_array_equal(t.kappa, again.kappa)
        np.testing.assert_array_equal(t.grade, again.grade)
        assert t.s_lap == again.s_lap

    def test_rejects_wrong_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("s,curvature,grade\n0,0,0\n2,0,0\n")
        with pytest.raises(TrackError):
            track.load_track_csv(path)

    def test_rejects_duplicate_s(self, tmp_path):
        path = tmp_path / "dup.csv"
        rows = ["s,kappa,grade"] + [f"{v},0,0" for v in [0, 2, 2, 6]]
        path.write_text("\n".join(rows) + "\n")
        with pytest.raises(TrackError):
            track.load_track_csv(path)
