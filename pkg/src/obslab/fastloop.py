"""Compiled lockstep loop for one observer against the truth model.

Mirrors, step for step, what :func:`obslab.sim.run` does with the
:class:`~obslab.observers.PredictiveObserver` and
:class:`~obslab.observers.StandardObserver` classes, without the per-call
Python overhead. The classes stay the reference; tests hold the two to
agreement at rounding level.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

MODE_LITERAL = 0
MODE_SLIDING = 1
MODE_STANDARD = 2


@njit(cache=True)
def _rk4_state(x, h, w0, wm, w1, v0, vm, v1, extra):
    out = np.empty(6)
    half = 0.5 * h
    sixth = h / 6.0
    for j in range(3):
        a = x[2 * j]
        b = x[2 * j + 1]
        ea = extra[2 * j]
        eb = extra[2 * j + 1]
        if j == 0:
            b0a, b0b = v0[0] + ea, v0[1] + eb
            bma, bmb = vm[0] + ea, vm[1] + eb
            b1a, b1b = v1[0] + ea, v1[1] + eb
        else:
            b0a = bma = b1a = ea
            b0b = bmb = b1b = eb
        # A(w) acts on (a, b) as w * (b, -a)
        k1a = w0 * b + b0a
        k1b = -w0 * a + b0b
        ya, yb = a + half * k1a, b + half * k1b
        k2a = wm * yb + bma
        k2b = -wm * ya + bmb
        ya, yb = a + half * k2a, b + half * k2b
        k3a = wm * yb + bma
        k3b = -wm * ya + bmb
        ya, yb = a + h * k3a, b + h * k3b
        k4a = w1 * yb + b1a
        k4b = -w1 * ya + b1b
        out[2 * j] = a + sixth * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
        out[2 * j + 1] = b + sixth * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
    return out


@njit(cache=True)
def _riccati_rhs(p, w, q, eps):
    # G P rows: (G P)[2i] = P[2i+1], (G P)[2i+1] = -P[2i]
    gp = np.empty((6, 6))
    for i in range(3):
        for c in range(6):
            gp[2 * i, c] = p[2 * i + 1, c]
            gp[2 * i + 1, c] = -p[2 * i, c]
    out = np.empty((6, 6))
    for r in range(6):
        for c in range(6):
            out[r, c] = -eps * p[r, c] + w * (gp[r, c] + gp[c, r]) + q[r, c]
    return out


@njit(cache=True)
def _rk4_riccati(p, h, w0, wm, w1, q, eps):
    k1 = _riccati_rhs(p, w0, q, eps)
    k2 = _riccati_rhs(p + 0.5 * h * k1, wm, q, eps)
    k3 = _riccati_rhs(p + 0.5 * h * k2, wm, q, eps)
    k4 = _riccati_rhs(p + h * k3, w1, q, eps)
    p = p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return 0.5 * (p + p.T)


@njit(cache=True)
def _solve_spd(p, b):
    """Cholesky solve; pseudo-inverse when P is not positive definite."""
    n = 6
    low = np.zeros((n, n))
    ok = True
    for j in range(n):
        s = p[j, j]
        for k in range(j):
            s -= low[j, k] * low[j, k]
        if not s > 0.0:
            ok = False
            break
        low[j, j] = math.sqrt(s)
        for i in range(j + 1, n):
            s = p[i, j]
            for k in range(j):
                s -= low[i, k] * low[j, k]
            low[i, j] = s / low[j, j]
    if not ok:
        return np.linalg.pinv(p) @ b, False
    z = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= low[i, k] * z[k]
        z[i] = s / low[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = z[i]
        for k in range(i + 1, n):
            s -= low[k, i] * x[k]
        x[i] = s / low[i, i]
    return x, True


@njit(cache=True)
def _rotate(ang, f):
    cs = math.cos(ang)
    sn = math.sin(ang)
    out = np.empty(6)
    for j in range(3):
        out[2 * j] = cs * f[2 * j] + sn * f[2 * j + 1]
        out[2 * j + 1] = cs * f[2 * j + 1] - sn * f[2 * j]
    return out


@njit(cache=True)
def lockstep(mode, x0, x_hat0, p0, c, cts, q, eps, dt, n, nd,
             w_nodes, w_mid, v_nodes, v_mid, omega_int, lag,
             noise_y, noise_v, stride, tail_start, band_start, div_factor, time_tol):
    """Run ``n + 1`` lockstep steps; see :func:`obslab.sim.run` for the protocol.

    Returns ``(rows, t, x_tilde, y_tilde, lmin, lmax, x_rec, xh_rec, err0,
    tail_max, band, diverged_at, asym, pinv_used)``; ``diverged_at`` is -1
    when the run did not diverge.
    """
    m_out = c.shape[0]
    n_rec = n // stride + 1
    rt = np.empty(n_rec)
    rxt = np.empty(n_rec)
    ryt = np.empty(n_rec)
    rlmin = np.empty(n_rec)
    rlmax = np.empty(n_rec)
    rx = np.empty((n_rec, 6))
    rxh = np.empty((n_rec, 6))

    truth = np.empty((n + 1, 6))
    xh_hist = np.empty((n + 1, 6))
    res_hist = np.zeros((n + 1, 6))

    # trapezoid weights against lags nd..0, oldest sample first
    wts = np.full(nd + 1, dt)
    wts[0] = 0.5 * dt
    wts[nd] = 0.5 * dt
    wc = np.empty(nd + 1)
    ws = np.empty(nd + 1)
    inj_angle = 0.0
    if mode == MODE_LITERAL and nd > 0:
        for i in range(nd + 1):
            a = lag[nd - i]
            wc[i] = wts[i] * math.cos(a)
            ws[i] = wts[i] * math.sin(a)
        inj_angle = lag[nd]

    x = x0.copy()
    xh = x_hat0.copy()
    p = p0.copy()
    err0 = -1.0
    tail_max = 0.0
    band = 0.0
    diverged_at = -1.0
    asym = 0.0
    pinv_used = False
    rows = 0
    zero = np.zeros(6)
    y_hat = np.zeros(m_out)
    for k in range(n + 1):
        t = k * dt
        truth[k] = x
        xd = x0 if k < nd else truth[k - nd]
        y = c @ xd + noise_y[k]
        v0 = v_nodes[k] + noise_v[k]
        vm = v_mid[k] + noise_v[k]
        v1 = v_nodes[k + 1] + noise_v[k]
        w0, wm, w1 = w_nodes[k], w_mid[k], w_nodes[k + 1]

        err = 0.0
        for i in range(6):
            err += (x[i] - xh[i]) ** 2
        err = math.sqrt(err)
        if err0 < 0.0:
            err0 = err

        xh_hist[k] = xh
        base = x_hat0 if k < nd else xh_hist[k - nd]
        est = base.copy()
        if mode != MODE_STANDARD and nd > 0:
            head = res_hist[k - 1] if k > 0 else zero
            a = np.zeros(6)
            b = np.zeros(6)
            if mode == MODE_SLIDING:
                om_now = omega_int[k]
                for i in range(nd + 1):
                    kk = k - nd + i
                    om = omega_int[kk] if kk >= 0 else 0.0
                    ang = om_now - om
                    wc[i] = wts[i] * math.cos(ang)
                    ws[i] = wts[i] * math.sin(ang)
                    if i == 0:
                        inj_angle = ang
            for i in range(nd):
                kk = k - nd + i
                if kk >= 0:
                    fi = res_hist[kk]
                    for r in range(6):
                        a[r] += wc[i] * fi[r]
                        b[r] += ws[i] * fi[r]
            for r in range(6):
                a[r] += wc[nd] * head[r]
                b[r] += ws[nd] * head[r]
            for j in range(3):
                est[2 * j] += a[2 * j] + b[2 * j + 1]
                est[2 * j + 1] += a[2 * j + 1] - b[2 * j]
        elif mode == MODE_SLIDING:
            inj_angle = 0.0
        y_hat = c @ est
        f, ok = _solve_spd(p, cts @ (y - y_hat))
        if not ok:
            pinv_used = True
        res_hist[k] = f
        if mode == MODE_STANDARD or (inj_angle == 0.0):
            inj = f
        else:
            inj = _rotate(inj_angle, f)
        xh = _rk4_state(xh, dt, w0, wm, w1, v0, vm, v1, inj)
        finite = True
        for i in range(6):
            if not math.isfinite(xh[i]):
                finite = False
        p = _rk4_riccati(p, dt, w0, wm, w1, q, eps)
        for i in range(6):
            for jj in range(6):
                if not math.isfinite(p[i, jj]):
                    finite = False
        if not finite:
            diverged_at = t
            break

        if t >= tail_start:
            tail_max = max(tail_max, err)
        if t >= band_start:
            band = max(band, err)
        if k % stride == 0:
            rt[rows] = t
            rxt[rows] = err
            ey = 0.0
            for i in range(m_out):
                ey += (y[i] - y_hat[i]) ** 2
            ryt[rows] = math.sqrt(ey)
            # the reference records P after the step
            eig = np.linalg.eigvalsh(p)
            rlmin[rows] = eig[0]
            rlmax[rows] = eig[5]
            asym = max(asym, np.abs(p - p.T).max())
            rx[rows] = x
            rxh[rows] = xh_hist[k]
            rows += 1
        if not math.isfinite(err) or err > div_factor * max(err0, time_tol):
            diverged_at = t
            break

        x = _rk4_state(x, dt, w0, wm, w1, v_nodes[k], v_mid[k], v_nodes[k + 1], zero)
        nrm = math.hypot(x[2], x[3])
        cs, sn = x[2] / nrm, x[3] / nrm
        x[2], x[3], x[4], x[5] = cs, sn, -sn, cs
    return (rows, rt, rxt, ryt, rlmin, rlmax, rx, rxh, err0, tail_max, band, diverged_at, asym, pinv_used)
