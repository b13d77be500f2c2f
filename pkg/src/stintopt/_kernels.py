"""Tight numerical loops behind the simulators.

The 1 m stint march runs tens of thousands of steps and sits inside a
bisection that may evaluate it dozens of times per throttle map, so the
inner loop is compiled with numba.  Set STINTOPT_NO_NUMBA=1 to fall back to
the pure-Python versions (identical arithmetic, ~100x slower), which also
serve as the reference in the kernel cross-check tests.

Everything here works on plain float64 scalars and arrays; the readable
dataclass-based physics lives in :mod:`stintopt.model` and must stay in
exact agreement (asserted to 1e-12 in the test suite).
"""

from __future__ import annotations

import math
import os

MARCH_OK = 0
MARCH_STALL = 1
MARCH_BRAKING = 2


def _march_impl(
    h,
    lam,
    env,
    c_a,
    resist,
    lambda_c,
    p_full,
    v_coast_min,
    m_eq,
    F_m_max,
    P_regen,
    F_brake_max,
    alpha_m,
    beta_m,
    alpha_b,
    P_aux,
    h_m,
    h_b,
    C_m,
    C_b,
    theta_cool,
    e_kin0,
    e_b0,
    th_m0,
    th_b0,
    t0,
    E_kin,
    E_b,
    th_m,
    th_b,
    t_arr,
    u_th,
    clamped,
):
    """Full-throttle-or-coast AB2 march; returns (status, node index).

    Arrays are per simulation node (n+1 entries, 1 m apart).  The input
    applied over [k, k+1] is recorded at the destination node k+1 so that
    fractional throttle only ever appears where the state sits exactly on
    the braking envelope.
    """
    n = len(E_kin) - 1
    E_kin[0] = e_kin0
    E_b[0] = e_b0
    th_m[0] = th_m0
    th_b[0] = th_b0
    t_arr[0] = t0
    u_th[0] = 0.0
    clamped[0] = False

    prev_de = 0.0
    prev_deb = 0.0
    prev_dthm = 0.0
    prev_dthb = 0.0
    prev_dt = 0.0

    for k in range(n):
        e = E_kin[k]
        if e <= 0.0:
            return MARCH_STALL, k
        v = math.sqrt(2.0 * e / m_eq)
        ell = 1.0 / v
        f_full = min(F_m_max, p_full * ell)
        if k == 0:
            w1, w0 = 1.0, 0.0
        else:
            w1, w0 = 1.5, -0.5

        # a coast instruction only applies when the driver would otherwise
        # be flat-out; when full throttle would overrun the envelope the
        # driver is grip-limited and holds or brakes instead
        de_flat = f_full - c_a[k] * e - resist[k]
        e_flat = e + h * (w1 * de_flat + w0 * prev_de)
        coast = lam[k] >= lambda_c and e_flat <= env[k + 1] + 1e-9
        if v_coast_min > 0.0 and v < v_coast_min:
            coast = False
        f_m = 0.0 if coast else f_full
        f_br = 0.0
        de = f_m + f_br - c_a[k] * e - resist[k]
        e_next = e + h * (w1 * de + w0 * prev_de)

        was_clamped = False
        uth_k = 0.0 if coast else 1.0
        if e_next > env[k + 1]:
            was_clamped = True
            target = env[k + 1]
            needed = ((target - e) / h - w0 * prev_de) / w1
            f_tot = needed + c_a[k] * e + resist[k]
            f_lo = -min(F_m_max, P_regen * ell)
            f_m = min(max(f_tot, f_lo), f_full)
            f_br = f_tot - f_m
            if f_br < -F_brake_max - 1e-6:
                return MARCH_BRAKING, k
            if f_br > 0.0:
                f_br = 0.0
            de = f_m + f_br - c_a[k] * e - resist[k]
            e_next = e + h * (w1 * de + w0 * prev_de)
            uth_k = f_m / f_full if f_m > 0.0 else 0.0

        if e_next <= 0.0:
            return MARCH_STALL, k + 1

        f_loss_m = alpha_m * f_m * f_m + beta_m
        f_dc = f_m + f_loss_m + P_aux * ell
        f_loss_b = alpha_b * f_dc * f_dc
        deb = -(f_dc + f_loss_b)
        dthm = (f_loss_m - h_m * (th_m[k] - theta_cool) * ell) / C_m
        dthb = (f_loss_b - h_b * (th_b[k] - theta_cool) * ell) / C_b

        E_kin[k + 1] = e_next
        E_b[k + 1] = E_b[k] + h * (w1 * deb + w0 * prev_deb)
        th_m[k + 1] = th_m[k] + h * (w1 * dthm + w0 * prev_dthm)
        th_b[k + 1] = th_b[k] + h * (w1 * dthb + w0 * prev_dthb)
        t_arr[k + 1] = t_arr[k] + h * (w1 * ell + w0 * prev_dt)
        u_th[k + 1] = uth_k
        clamped[k + 1] = was_clamped

        prev_de = de
        prev_deb = deb
        prev_dthm = dthm
        prev_dthb = dthb
        prev_dt = ell

    return MARCH_OK, n


if os.environ.get("STINTOPT_NO_NUMBA"):
    march = _march_impl
else:
    import numba

    march = numba.njit(cache=True)(_march_impl)
