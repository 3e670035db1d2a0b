"""Compiled horizon loop for the CTM-s dynamics.

The per-step algorithm is the same as :func:`ctms_station.ctm.step_with_flows`
(which stays the readable reference); this version runs a whole horizon in
one numba call. Cells are 0-based here. ``access``/``exit_`` are -1 when the
stretch has no station.

Status codes returned in ``status``:
    0 ok, 1 negative density, 2 density above jam density, 3 non-finite value,
    4 negative flow.
"""

from __future__ import annotations

import numpy as np
from numba import njit

OK = 0
NEGATIVE_DENSITY = 1
ABOVE_JAM = 2
NON_FINITE = 3
NEGATIVE_FLOW = 4

_BISECTION_ITERS = 200


@njit(cache=True)
def _median(a, b, c):
    return max(min(a, b), min(max(a, b), c))


@njit(cache=True)
def merge(mainstream, secondary, supply, priority):
    if mainstream + secondary <= supply:
        return mainstream, secondary
    m = _median(mainstream, supply - secondary, priority * supply)
    s = _median(secondary, supply - mainstream, (1.0 - priority) * supply)
    return m, s


@njit(cache=True)
def _loop_exit_demand(send_a, frac_a, ratio, supply_x, ramp_dem,
                      priority, queued, step_hours, rsmax):
    """Station exit demand when exit = access + 1 and the lag is zero.

    The exit demand depends on the access-cell outflow, which depends on the
    mainstream share of the exit-cell merge. g(y) is non-increasing, so the
    fixed point is bracketed by [0, g(0)]; the lower bracket is returned so
    that the realised station flow never exceeds what actually arrived.
    """
    lo = 0.0
    hi = 0.0
    for it in range(_BISECTION_ITERS + 1):
        y = lo if it == 0 else 0.5 * (lo + hi)
        sec = ramp_dem + y
        if sec > 0.0:
            m, _ = merge(send_a, sec, supply_x, priority)
        else:
            m = min(send_a, supply_x)
        out = m / frac_a
        g = min(ratio * out + queued / step_hours, rsmax)
        if it == 0:
            hi = g
            if g == 0.0:
                return 0.0
            continue
        if g >= y:
            lo = y
        else:
            hi = y
        if hi - lo <= 1e-13 * max(1.0, hi):
            break
    return lo


@njit(cache=True)
def run_horizon(L, vf, w, qmax, rhomax, beta,
                access, exit_, ratio, lag, priority, rsmax,
                step_hours, inflow, onramp, has_ramps,
                rho0, ell0, e0, buf0, rq0, oq0, record):
    n = L.shape[0]
    th = inflow.shape[0]
    rows = th if record else 1

    out_density = np.zeros((rows, n))
    out_phi = np.zeros((rows, n + 1))
    out_in = np.zeros((rows, n))
    out_out = np.zeros((rows, n))
    out_r = np.zeros((rows, n))
    out_s = np.zeros((rows, n))
    out_speed = np.zeros((rows, n))
    out_rq = np.zeros((rows, n))
    out_ss = np.zeros(rows)
    out_rs = np.zeros(rows)
    out_ds = np.zeros(rows)
    out_ell = np.zeros(rows)
    out_e = np.zeros(rows)
    out_oq = np.zeros(rows)
    delay = np.zeros(th)

    rho = rho0.copy()
    rq = rq0.copy()
    ell = ell0
    e = e0
    oq = oq0
    buf = buf0.copy()
    head = 0

    demand = np.empty(n)
    frac = np.empty(n)
    send = np.empty(n)
    supply = np.empty(n)
    phi = np.empty(n + 1)
    r = np.empty(n)
    s = np.empty(n)
    restricted = np.zeros(n, dtype=np.bool_)
    inv_len = np.empty(n)
    free_delay = np.empty(n)
    for c in range(n):
        inv_len[c] = step_hours / L[c]
        free_delay[c] = L[c] / vf[c]

    status = OK
    bad_step = -1
    bad_cell = -1

    for k in range(th):
        row = k if record else 0
        for c in range(n):
            demand[c] = min(vf[c] * rho[c], qmax[c])
            frac[c] = 1.0 - beta[c]
            if c == access:
                frac[c] -= ratio
            send[c] = frac[c] * demand[c]
            supply[c] = min(w[c] * (rhomax[c] - rho[c]), qmax[c])
            restricted[c] = False

        past = buf[head] if lag >= 1 else 0.0
        origin_dem = inflow[k] + oq / step_hours
        ss_now = 0.0
        rs = 0.0
        ds = 0.0

        for c in range(n):
            if c == 0:
                mdem = origin_dem
            else:
                mdem = send[c - 1]
            ramp_dem = 0.0
            if has_ramps:
                ramp_dem = onramp[k, c] + rq[c] / step_hours
            sec = ramp_dem
            if c == exit_:
                if lag >= 1:
                    ds = min(past + e / step_hours, rsmax)
                elif c - 1 != access or frac[access] <= 0.0:
                    ds = min(ss_now + e / step_hours, rsmax)
                else:
                    ds = _loop_exit_demand(send[access], frac[access], ratio, supply[c],
                                           ramp_dem, priority, e,
                                           step_hours, rsmax)
                sec = ramp_dem + ds
            if sec > 0.0:
                m, sf = merge(mdem, sec, supply[c], priority)
                if c == exit_:
                    rs = sf * (ds / sec)
                    r[c] = sf * (ramp_dem / sec)
                else:
                    r[c] = sf
            else:
                m = min(mdem, supply[c])
                r[c] = 0.0
            phi[c] = m
            if c >= 1:
                p = c - 1
                restricted[p] = m < send[p]
                if frac[p] > 0.0:
                    tot = m / frac[p]
                else:
                    tot = demand[p]
                s[p] = beta[p] * tot
                if p == access:
                    ss_now = ratio * tot

        last = n - 1
        phi[n] = send[last]
        if frac[last] > 0.0:
            tot = send[last] / frac[last]
        else:
            tot = demand[last]
        s[last] = beta[last] * tot

        if lag == 0:
            past = ss_now

        if record:
            for c in range(n):
                out_density[row, c] = rho[c]
                out_rq[row, c] = rq[c]
            out_ell[row] = ell
            out_e[row] = e
            out_oq[row] = oq

        dk = 0.0
        for c in range(n):
            t_out = phi[c + 1] + s[c]
            if c == access:
                t_out += ss_now
            t_in = phi[c] + r[c]
            if c == exit_:
                t_in += rs
            if rho[c] <= 0.0:
                v = vf[c]
            elif (not restricted[c]) and vf[c] * rho[c] <= qmax[c]:
                v = vf[c]
            else:
                v = min(vf[c], t_out / rho[c])
            if v <= 0.0:
                dk = np.inf
            elif v < vf[c]:
                dk += L[c] / v - free_delay[c]
            if record:
                out_phi[row, c] = phi[c]
                out_in[row, c] = t_in
                out_out[row, c] = t_out
                out_r[row, c] = r[c]
                out_s[row, c] = s[c]
                out_speed[row, c] = v
            new_rho = rho[c] + inv_len[c] * (t_in - t_out)
            if not np.isfinite(new_rho):
                if status == OK:
                    status, bad_step, bad_cell = NON_FINITE, k, c
            elif new_rho < 0.0:
                if status == OK:
                    status, bad_step, bad_cell = NEGATIVE_DENSITY, k, c
            elif new_rho > rhomax[c]:
                if status == OK:
                    status, bad_step, bad_cell = ABOVE_JAM, k, c
            if phi[c] < 0.0 or r[c] < 0.0 or s[c] < 0.0:
                if status == OK:
                    status, bad_step, bad_cell = NEGATIVE_FLOW, k, c
            rho[c] = new_rho
        delay[k] = dk
        if record:
            out_phi[row, n] = phi[n]
            out_ss[row] = ss_now
            out_rs[row] = rs
            out_ds[row] = ds

        if ss_now < 0.0 or rs < 0.0:
            if status == OK:
                status, bad_step, bad_cell = NEGATIVE_FLOW, k, -1

        # Station bookkeeping: a fully served exit demand empties the queue.
        ell = ell + step_hours * (ss_now - rs)
        if rs >= past + e / step_hours:
            e = 0.0
        else:
            e = e + step_hours * (past - rs)
        if lag >= 1:
            buf[head] = ss_now
            head += 1
            if head == lag:
                head = 0

        if has_ramps:
            for c in range(n):
                if r[c] >= onramp[k, c] + rq[c] / step_hours:
                    rq[c] = 0.0
                else:
                    rq[c] = rq[c] + step_hours * (onramp[k, c] - r[c])
        if phi[0] >= origin_dem:
            oq = 0.0
        else:
            oq = oq + step_hours * (inflow[k] - phi[0])

        if status != OK:
            break

    chrono = np.empty(max(lag, 0))
    for q in range(lag):
        chrono[q] = buf[(head + q) % lag]

    return (status, bad_step, bad_cell,
            rho, ell, e, chrono, rq, oq,
            out_density, out_phi, out_in, out_out, out_r, out_s, out_speed,
            out_rq, out_ss, out_rs, out_ds, out_ell, out_e, out_oq, delay)
