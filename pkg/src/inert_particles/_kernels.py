"""Compiled inner loops for the Skorokhod sweep and the two particle simulators.

Every kernel is a pure function of its array arguments.  State that carries
from one chunk of Brownian increments to the next is passed in and returned
through small ``state`` arrays so chunking never changes the output.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# step-level LCP: indices with y below -LCP_EPS join the active set
LCP_EPS = 1e-14

STATUS_OK = 0
STATUS_PICARD_FAILED = 1
STATUS_STOPPED = 2


@njit(cache=True, inline="always")
def _solve_dense(a, b, k, m, x):
    """Gaussian elimination with partial pivoting on the leading k x k block.

    ``m`` and ``x`` are scratch arrays of at least that size; ``x`` holds the
    solution on return.
    """
    for i in range(k):
        x[i] = b[i]
        for j in range(k):
            m[i, j] = a[i, j]
    for c in range(k):
        p = c
        best = abs(m[c, c])
        for r in range(c + 1, k):
            if abs(m[r, c]) > best:
                best = abs(m[r, c])
                p = r
        if p != c:
            for j in range(k):
                tmp = m[c, j]
                m[c, j] = m[p, j]
                m[p, j] = tmp
            tmp = x[c]
            x[c] = x[p]
            x[p] = tmp
        for r in range(c + 1, k):
            f = m[r, c] / m[c, c]
            if f != 0.0:
                for j in range(c, k):
                    m[r, j] -= f * m[c, j]
                x[r] -= f * x[c]
    for c in range(k - 1, -1, -1):
        s = x[c]
        for j in range(c + 1, k):
            s -= m[c, j] * x[j]
        x[c] = s / m[c, c]


@njit(cache=True, inline="always")
def lcp_step(q, r, deta, y, active, sub_a, sub_b, work_m, work_x):
    """Solve ``y = q + R d >= 0, d >= 0, y.d = 0`` for an M-matrix ``R``.

    Monotone active-set pivoting: grow the active set by every index whose
    candidate ``y`` is negative; at most ``n`` rounds.  Results are written
    into ``deta`` and ``y``.
    """
    n = q.shape[0]
    neg = False
    for i in range(n):
        deta[i] = 0.0
        y[i] = q[i]
        active[i] = False
        if q[i] < -LCP_EPS:
            neg = True
    if not neg:
        return
    for _ in range(n + 1):
        added = False
        for i in range(n):
            if not active[i] and y[i] < -LCP_EPS:
                active[i] = True
                added = True
        if not added:
            break
        k = 0
        for i in range(n):
            if active[i]:
                sub_b[k] = -q[i]
                kk = 0
                for j in range(n):
                    if active[j]:
                        sub_a[k, kk] = r[i, j]
                        kk += 1
                k += 1
        if k == 1:
            for i in range(n):
                if active[i]:
                    deta[i] = -q[i] / r[i, i]
        else:
            _solve_dense(sub_a, sub_b, k, work_m, work_x)
            k = 0
            for i in range(n):
                if active[i]:
                    deta[i] = work_x[k]
                    k += 1
        for i in range(n):
            if deta[i] < 0.0:
                deta[i] = 0.0
        for i in range(n):
            s = q[i]
            for j in range(n):
                s += r[i, j] * deta[j]
            y[i] = s
    for i in range(n):
        if active[i]:
            y[i] = 0.0 if y[i] < 0.0 else y[i]


@njit(cache=True)
def skorokhod_sweep(x, r):
    """Causal discrete Skorokhod map: one exact LCP per grid step."""
    steps, n = x.shape
    eta = np.zeros((steps, n))
    y = np.empty((steps, n))
    q = np.empty(n)
    d = np.empty(n)
    yy = np.empty(n)
    active = np.zeros(n, dtype=np.bool_)
    sub_a = np.empty((n, n))
    sub_b = np.empty(n)
    work_m = np.empty((n, n))
    work_x = np.empty(n)
    for i in range(n):
        y[0, i] = x[0, i]
    for t in range(1, steps):
        # rebuild q from x and eta so roundoff does not accumulate along the path
        neg = False
        for i in range(n):
            acc = x[t, i]
            for j in range(n):
                acc += r[i, j] * eta[t - 1, j]
            q[i] = acc
            if acc < -LCP_EPS:
                neg = True
        if not neg:
            for i in range(n):
                eta[t, i] = eta[t - 1, i]
                y[t, i] = q[i]
            continue
        lcp_step(q, r, d, yy, active, sub_a, sub_b, work_m, work_x)
        for i in range(n):
            eta[t, i] = eta[t - 1, i] + d[i]
        for i in range(n):
            acc = x[t, i]
            for j in range(n):
                acc += r[i, j] * eta[t, j]
            y[t, i] = acc
    return eta, y


@njit(cache=True)
def gap_chunk(
    db, r, g, dt, v0, k_start, k_last, window, picard_tol, max_picard, record_every,
    z, l, b, bstar, state, out_t, out_v, out_x0, out_z, out_l, out_b, out_bstar, out_vsup, n_out,
    stop_level, stop_sign,
):
    """Advance the velocity/gap/local-time system over one chunk of increments.

    ``db`` holds Brownian increments (steps x n) for global steps
    ``k_start + 1 .. k_start + len(db)``; steps divisible by ``record_every``
    and the final step ``k_last`` are written to the ``out_*`` arrays.
    ``z, l, b, bstar`` are the current
    gap, local time, Brownian and running-sup vectors; ``state`` is
    ``[x0_integral, vsup_pos, picard_iters_total, windows_shrunk]``.
    With ``stop_sign = +1`` (``-1``) the run ends at the first step where V
    is at or above (below) ``stop_level``; that step is always recorded and
    ``STATUS_STOPPED`` is returned.  ``stop_sign = 0`` disables stopping.

    Each window runs Picard iteration on the velocity path: given a guess for
    V, the input ``Z_start - e1 int V + A (B - B_start)`` (trapezoid in time)
    is reflected by the causal Skorokhod sweep, the regulator gives L1 and so
    a new V.  The window is accepted when successive V paths agree to
    ``picard_tol``; one halving of the window is attempted before giving up.

    Returns ``(status, n_out, failed_step, last_residual)``.
    """
    steps, n = db.shape
    wmax = window
    vg = np.empty(wmax + 1)
    vn = np.empty(wmax + 1)
    zw = np.empty((wmax + 1, n))
    lw = np.empty((wmax + 1, n))
    bw = np.empty((wmax + 1, n))
    cumv = np.empty(wmax + 1)
    q = np.empty(n)
    d = np.empty(n)
    yy = np.empty(n)
    active = np.zeros(n, dtype=np.bool_)
    sub_a = np.empty((n, n))
    sub_b = np.empty(n)
    work_m = np.empty((n, n))
    work_x = np.empty(n)

    j0 = 0
    while j0 < steps:
        m_full = min(wmax, steps - j0)
        attempt_len = m_full
        done_len = 0
        shrunk = False
        while done_len < m_full:
            m = min(attempt_len, m_full - done_len)
            base = j0 + done_len
            kb = k_start + base
            # Brownian path on the window, relative to the window start.
            for i in range(n):
                bw[0, i] = 0.0
            for j in range(1, m + 1):
                for i in range(n):
                    bw[j, i] = bw[j - 1, i] + db[base + j - 1, i]
            l1s = l[0]
            for j in range(m + 1):
                vg[j] = v0 + g * (kb + j) * dt - l1s
            converged = False
            resid = np.inf
            for it in range(max_picard):
                cumv[0] = 0.0
                for j in range(1, m + 1):
                    cumv[j] = cumv[j - 1] + 0.5 * dt * (vg[j - 1] + vg[j])
                for i in range(n):
                    zw[0, i] = z[i]
                    lw[0, i] = 0.0
                for j in range(1, m + 1):
                    # increment of Z0 - e1 int V + A B between j-1 and j
                    q[0] = zw[j - 1, 0] + (bw[j, 0] - bw[j - 1, 0]) - (cumv[j] - cumv[j - 1])
                    for i in range(1, n):
                        q[i] = zw[j - 1, i] + (bw[j, i] - bw[j - 1, i]) - (bw[j, i - 1] - bw[j - 1, i - 1])
                    neg = False
                    for i in range(n):
                        if q[i] < -LCP_EPS:
                            neg = True
                    if not neg:
                        for i in range(n):
                            zw[j, i] = q[i]
                            lw[j, i] = lw[j - 1, i]
                        continue
                    lcp_step(q, r, d, yy, active, sub_a, sub_b, work_m, work_x)
                    for i in range(n):
                        zw[j, i] = yy[i]
                        lw[j, i] = lw[j - 1, i] + d[i]
                resid = 0.0
                for j in range(m + 1):
                    vn[j] = v0 + g * (kb + j) * dt - (l1s + lw[j, 0])
                    dv = abs(vn[j] - vg[j])
                    if dv > resid:
                        resid = dv
                    vg[j] = vn[j]
                state[2] += 1.0
                if resid < picard_tol:
                    converged = True
                    break
            if not converged:
                if shrunk or m < 2:
                    return STATUS_PICARD_FAILED, n_out, kb, resid
                shrunk = True
                state[3] += 1.0
                attempt_len = max(1, m // 2)
                continue
            # commit: cumv still holds the integral of the V path fed to the last
            # sweep, so stored x0 and z stay exactly consistent
            x0s = state[0]
            for j in range(1, m + 1):
                k = kb + j
                for i in range(n):
                    b[i] += bw[j, i] - bw[j - 1, i]
                s = -b[0]
                if s > bstar[0]:
                    bstar[0] = s
                for i in range(1, n):
                    s = b[i - 1] - b[i]
                    if s > bstar[i]:
                        bstar[i] = s
                vpos = vg[j] if vg[j] > 0.0 else 0.0
                if vpos > state[1]:
                    state[1] = vpos
                hit = (stop_sign > 0 and vg[j] >= stop_level) or (stop_sign < 0 and vg[j] <= stop_level)
                if k % record_every == 0 or k == k_last or hit:
                    out_t[n_out] = k * dt
                    out_v[n_out] = vg[j]
                    out_x0[n_out] = x0s + cumv[j]
                    for i in range(n):
                        out_z[n_out, i] = zw[j, i]
                        out_l[n_out, i] = l[i] + lw[j, i]
                        out_b[n_out, i] = b[i]
                        out_bstar[n_out, i] = bstar[i]
                    out_vsup[n_out] = state[1]
                    n_out += 1
                if hit:
                    state[0] = x0s + cumv[j]
                    for i in range(n):
                        z[i] = zw[j, i]
                        l[i] = l[i] + lw[j, i]
                    return STATUS_STOPPED, n_out, k, 0.0
            state[0] = x0s + cumv[m]
            for i in range(n):
                z[i] = zw[m, i]
                l[i] = l[i] + lw[m, i]
            done_len += m
        j0 += m_full
    return STATUS_OK, n_out, -1, 0.0


@njit(cache=True)
def unranked_chunk(
    dw, g, dt, v0, xpos, k_start, k_last, window, picard_tol, max_picard, record_every,
    w, ell, state, out_t, out_v, out_x, out_ell, n_out,
):
    """Advance the unranked system (inert particle + n Brownian particles).

    ``xpos`` holds the initial positions ``x_0..x_n``; ``w`` the current
    Brownian displacements; ``ell`` the collision local times; ``state`` is
    ``[x0_integral, picard_iters_total, windows_shrunk]``.  Each Brownian
    particle is reflected off the inert path by the one-dimensional Skorokhod
    map ``ell_i(t) = max(ell_i, X0(t) - x_i - W_i(t))``.
    """
    steps, n = dw.shape
    wmax = window
    vg = np.empty(wmax + 1)
    cumv = np.empty(wmax + 1)
    ww = np.empty((wmax + 1, n))
    elw = np.empty((wmax + 1, n))

    j0 = 0
    while j0 < steps:
        m_full = min(wmax, steps - j0)
        attempt_len = m_full
        done_len = 0
        shrunk = False
        while done_len < m_full:
            m = min(attempt_len, m_full - done_len)
            base = j0 + done_len
            kb = k_start + base
            for i in range(n):
                ww[0, i] = w[i]
            for j in range(1, m + 1):
                for i in range(n):
                    ww[j, i] = ww[j - 1, i] + dw[base + j - 1, i]
            sum_ell = 0.0
            for i in range(n):
                sum_ell += ell[i]
            for j in range(m + 1):
                vg[j] = v0 + g * (kb + j) * dt - sum_ell
            x0s = state[0]
            converged = False
            resid = np.inf
            for it in range(max_picard):
                cumv[0] = 0.0
                for j in range(1, m + 1):
                    cumv[j] = cumv[j - 1] + 0.5 * dt * (vg[j - 1] + vg[j])
                for i in range(n):
                    elw[0, i] = ell[i]
                resid = 0.0
                for j in range(m + 1):
                    if j > 0:
                        x0 = xpos[0] + x0s + cumv[j]
                        for i in range(n):
                            push = x0 - xpos[i + 1] - ww[j, i]
                            elw[j, i] = push if push > elw[j - 1, i] else elw[j - 1, i]
                    s = 0.0
                    for i in range(n):
                        s += elw[j, i]
                    vnew = v0 + g * (kb + j) * dt - s
                    dv = abs(vnew - vg[j])
                    if dv > resid:
                        resid = dv
                    vg[j] = vnew
                state[1] += 1.0
                if resid < picard_tol:
                    converged = True
                    break
            if not converged:
                if shrunk or m < 2:
                    return STATUS_PICARD_FAILED, n_out, kb, resid
                shrunk = True
                state[2] += 1.0
                attempt_len = max(1, m // 2)
                continue
            for j in range(1, m + 1):
                k = kb + j
                if k % record_every == 0 or k == k_last:
                    out_t[n_out] = k * dt
                    out_v[n_out] = vg[j]
                    out_x[n_out, 0] = xpos[0] + x0s + cumv[j]
                    for i in range(n):
                        out_x[n_out, i + 1] = xpos[i + 1] + ww[j, i] + elw[j, i]
                        out_ell[n_out, i] = elw[j, i]
                    n_out += 1
            state[0] = x0s + cumv[m]
            for i in range(n):
                w[i] = ww[m, i]
                ell[i] = elw[m, i]
            done_len += m
        j0 += m_full
    return STATUS_OK, n_out, -1, 0.0
