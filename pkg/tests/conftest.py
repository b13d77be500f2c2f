"""Shared fixtures: the nominal 11-lap synthetic stint, solved once per session."""

import numpy as np
import pytest

from stintopt import liftcoast, model, socp, track

NOMINAL_SEED = 7
NOMINAL_CORNERS = 5
NOMINAL_S_LAP = 4100.0
NOMINAL_LAPS = 11
NOMINAL_E_B_TARGET = 10e6


@pytest.fixture(scope="session")
def nominal_track():
    return track.generate_synthetic_track(NOMINAL_SEED, NOMINAL_CORNERS, NOMINAL_S_LAP)


@pytest.fixture(scope="session")
def nominal_params():
    return model.default_params()


@pytest.fixture(scope="session")
def nominal_grip():
    return track.GripState(mu_scale=1.0, aero_scale=1.0, v_cap=None)


@pytest.fixture(scope="session")
def nominal_boundary(nominal_params):
    p = nominal_params
    x0 = model.VehicleState(
        E_kin=0.5 * p.m_eq * 25.0**2,
        E_b=0.98 * p.E_b_max,
        theta_m=320.0,
        theta_b=308.0,
    )
    return socp.StintBoundary(
        s0=0.0,
        S_stint=NOMINAL_LAPS * NOMINAL_S_LAP,
        x0=x0,
        E_b_target=NOMINAL_E_B_TARGET,
        theta_b_target=nominal_params.theta_b_max,
    )


@pytest.fixture(scope="session")
def nominal_grid(nominal_track, nominal_boundary):
    return track.build_grid(
        nominal_track, nominal_boundary.s0, nominal_boundary.S_stint, mode="optimizer"
    )


@pytest.fixture(scope="session")
def nominal_plan(nominal_track, nominal_params, nominal_grip, nominal_boundary, nominal_grid):
    conic = socp.build_problem(
        nominal_track, nominal_params, nominal_grip, nominal_boundary, nominal_grid
    )
    return socp.solve(conic)


@pytest.fixture(scope="session")
def nominal_ctx(nominal_plan, nominal_boundary, nominal_track, nominal_params, nominal_grip):
    return liftcoast.build_sim_context(
        nominal_plan, nominal_boundary, nominal_track, nominal_params, nominal_grip
    )


@pytest.fixture(scope="session")
def nominal_coast(
    nominal_plan, nominal_boundary, nominal_track, nominal_params, nominal_grip, nominal_ctx
):
    return liftcoast.fit_coast_thresholds(
        nominal_plan,
        liftcoast.default_maps(nominal_params),
        nominal_boundary,
        nominal_track,
        nominal_params,
        nominal_grip,
        ctx=nominal_ctx,
    )


def corner_spans(tr) -> np.ndarray:
    """(n, 2) array of [start, end] where |kappa| >= corner threshold."""
    on = np.abs(tr.kappa) >= track.KAPPA_CORNER
    edges = np.flatnonzero(np.diff(on.astype(int)))
    return tr.s[edges].reshape(-1, 2)
