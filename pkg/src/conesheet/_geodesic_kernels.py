"""Geodesic shooting kernels: per-ray compiled loop and lockstep numpy fallback.

The chart metric is given on a uniform ``(s = log rho, theta)`` grid as the
frame components ``p1, p2, p3`` and the Gauss curvature ``K``; values between
nodes come from Catmull-Rom bicubic interpolation (periodic in ``theta``,
linear ghost rows in ``s``).  State per ray is
``(rho, theta, v_rho, v_theta, J, J')`` with arclength ``r`` as the time.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import njit

# sample columns
R, RHO, THETA, VRHO, VTHETA, JAC, DJAC, CURV, DCURV, SPEED = range(10)
N_COLS = 10

# termination codes
EXIT, CONJUGATE, R_MAX, STEP_FAILURE, INNER_EXIT = range(5)
TERMINATION_NAMES = ("exit", "conjugate", "r_max", "step_failure", "inner_exit")


def pad_fields(fields: np.ndarray) -> np.ndarray:
    """Add one linear-extrapolation ghost ring on each radial side: ``(4, n+2, m)``."""
    f = np.asarray(fields, dtype=float)
    lo = 2.0 * f[:, :1] - f[:, 1:2]
    hi = 2.0 * f[:, -1:] - f[:, -2:-1]
    return np.ascontiguousarray(np.concatenate([lo, f, hi], axis=1))


# ---------------------------------------------------------------------------
# scalar kernels (compiled when numba is available)


@njit
def _cr_weights(t, w, dw):
    t2 = t * t
    t3 = t2 * t
    w[0] = 0.5 * (-t3 + 2.0 * t2 - t)
    w[1] = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0)
    w[2] = 0.5 * (-3.0 * t3 + 4.0 * t2 + t)
    w[3] = 0.5 * (t3 - t2)
    dw[0] = 0.5 * (-3.0 * t2 + 4.0 * t - 1.0)
    dw[1] = 0.5 * (9.0 * t2 - 10.0 * t)
    dw[2] = 0.5 * (-9.0 * t2 + 8.0 * t + 1.0)
    dw[3] = 0.5 * (3.0 * t2 - 2.0 * t)


@njit
def interp_point(padded, s0, ds, dth, rho, th, out, ws, dws, wt, dwt):
    """Values and ``(d/ds, d/dtheta)`` of the four fields at one point.

    ``out`` has shape ``(4, 3)``: value, s-derivative, theta-derivative.
    """
    n = padded.shape[1] - 2
    m = padded.shape[2]
    u = (math.log(rho) - s0) / ds if rho > 0.0 else -1.0
    if not (u == u):
        u = -1.0
    i = int(math.floor(u))
    if i < 0:
        i = 0
    if i > n - 2:
        i = n - 2
    tu = u - i
    v = th / dth
    if not (abs(v) < 1e15):
        v = 0.0
    j = int(math.floor(v))
    tv = v - j
    _cr_weights(tu, ws, dws)
    _cr_weights(tv, wt, dwt)
    for f in range(4):
        val = 0.0
        vs = 0.0
        vt = 0.0
        for a in range(4):
            row = i + a  # padded index of grid row i - 1 + a
            acc = 0.0
            acc_t = 0.0
            for b in range(4):
                col = (j - 1 + b) % m
                x = padded[f, row, col]
                acc += wt[b] * x
                acc_t += dwt[b] * x
            val += ws[a] * acc
            vs += dws[a] * acc
            vt += ws[a] * acc_t
        out[f, 0] = val
        out[f, 1] = vs / ds
        out[f, 2] = vt / dth


@njit
def _rhs(padded, s0, ds, dth, y, dy, buf, ws, dws, wt, dwt):
    rho = y[0]
    interp_point(padded, s0, ds, dth, rho, y[1], buf, ws, dws, wt, dwt)
    p1 = buf[0, 0]
    p2 = buf[1, 0]
    p3 = buf[2, 0]
    k = buf[3, 0]
    g11 = p1
    g12 = rho * p2
    g22 = rho * rho * p3
    d1g11 = buf[0, 1] / rho
    d1g12 = p2 + buf[1, 1]
    d1g22 = rho * (2.0 * p3 + buf[2, 1])
    d2g11 = buf[0, 2]
    d2g12 = rho * buf[1, 2]
    d2g22 = rho * rho * buf[2, 2]
    c1_11 = 0.5 * d1g11
    c1_12 = 0.5 * d2g11
    c1_22 = d2g12 - 0.5 * d1g22
    c2_11 = d1g12 - 0.5 * d2g11
    c2_12 = 0.5 * d1g22
    c2_22 = 0.5 * d2g22
    det = g11 * g22 - g12 * g12
    i11 = g22 / det
    i12 = -g12 / det
    i22 = g11 / det
    v1 = y[2]
    v2 = y[3]
    q1 = c1_11 * v1 * v1 + 2.0 * c1_12 * v1 * v2 + c1_22 * v2 * v2
    q2 = c2_11 * v1 * v1 + 2.0 * c2_12 * v1 * v2 + c2_22 * v2 * v2
    dy[0] = v1
    dy[1] = v2
    dy[2] = -(i11 * q1 + i12 * q2)
    dy[3] = -(i12 * q1 + i22 * q2)
    dy[4] = y[5]
    dy[5] = -k * y[4]
    return det


@njit
def _rk4(padded, s0, ds, dth, y, h, out, k1, k2, k3, k4, tmp, buf, ws, dws, wt, dwt):
    _rhs(padded, s0, ds, dth, y, k1, buf, ws, dws, wt, dwt)
    for c in range(6):
        tmp[c] = y[c] + 0.5 * h * k1[c]
    _rhs(padded, s0, ds, dth, tmp, k2, buf, ws, dws, wt, dwt)
    for c in range(6):
        tmp[c] = y[c] + 0.5 * h * k2[c]
    _rhs(padded, s0, ds, dth, tmp, k3, buf, ws, dws, wt, dwt)
    for c in range(6):
        tmp[c] = y[c] + h * k3[c]
    _rhs(padded, s0, ds, dth, tmp, k4, buf, ws, dws, wt, dwt)
    for c in range(6):
        out[c] = y[c] + h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c])


@njit
def _record(padded, s0, ds, dth, r, y, row, buf, ws, dws, wt, dwt):
    rho = y[0]
    interp_point(padded, s0, ds, dth, rho, y[1], buf, ws, dws, wt, dwt)
    p1 = buf[0, 0]
    p2 = buf[1, 0]
    p3 = buf[2, 0]
    v1 = y[2]
    v2 = y[3]
    speed = p1 * v1 * v1 + 2.0 * rho * p2 * v1 * v2 + rho * rho * p3 * v2 * v2
    row[R] = r
    row[RHO] = rho
    row[THETA] = y[1]
    row[VRHO] = v1
    row[VTHETA] = v2
    row[JAC] = y[4]
    row[DJAC] = y[5]
    row[CURV] = buf[3, 0]
    row[DCURV] = buf[3, 1] / rho * v1 + buf[3, 2] * v2
    row[SPEED] = speed - 1.0


@njit
def _step_error(a, b):
    rho = abs(b[0])
    e = abs(a[0] - b[0])
    e = max(e, rho * abs(a[1] - b[1]))
    e = max(e, abs(a[4] - b[4]))
    e = max(e, rho * abs(a[2] - b[2]))
    e = max(e, rho * rho * abs(a[3] - b[3]))
    e = max(e, rho * abs(a[5] - b[5]))
    return e / 15.0


@njit
def shoot_rays_compiled(padded, s0, ds, dth, rho_min, rho_max, init, r_init, r_max, tol,
                        dr_rel, capacity, samples, counts, codes):
    """Integrate every ray; ``init`` rows are ``(rho, theta, v_rho, v_theta, J, J')``."""
    n_rays = init.shape[0]
    y = np.empty(6)
    full = np.empty(6)
    half = np.empty(6)
    half2 = np.empty(6)
    trial = np.empty(6)
    k1 = np.empty(6)
    k2 = np.empty(6)
    k3 = np.empty(6)
    k4 = np.empty(6)
    tmp = np.empty(6)
    buf = np.empty((4, 3))
    ws = np.empty(4)
    dws = np.empty(4)
    wt = np.empty(4)
    dwt = np.empty(4)
    for n in range(n_rays):
        for c in range(6):
            y[c] = init[n, c]
        r = r_init[n]
        _record(padded, s0, ds, dth, r, y, samples[n, 0], buf, ws, dws, wt, dwt)
        cnt = 1
        dr = 0.01 * y[0]
        code = STEP_FAILURE
        while True:
            if cnt >= capacity:
                code = STEP_FAILURE
                break
            if r >= r_max * (1.0 - 1e-15):
                code = R_MAX
                break
            h = min(dr, dr_rel * y[0], r_max - r)
            if h < 1e-13 * max(y[0], 1e-300):
                code = STEP_FAILURE
                break
            _rk4(padded, s0, ds, dth, y, h, full, k1, k2, k3, k4, tmp, buf, ws, dws, wt, dwt)
            _rk4(padded, s0, ds, dth, y, 0.5 * h, half, k1, k2, k3, k4, tmp, buf, ws, dws, wt, dwt)
            _rk4(padded, s0, ds, dth, half, 0.5 * h, half2, k1, k2, k3, k4, tmp, buf, ws, dws,
                 wt, dwt)
            err = _step_error(half2, full)
            if not (err <= tol * h):
                fac = 0.1
                if err == err:
                    fac = max(0.1, min(0.9 * (tol * h / err) ** 0.25, 0.9))
                dr = h * fac
                continue
            for c in range(6):
                trial[c] = half2[c] + (half2[c] - full[c]) / 15.0
            fac = 4.0
            if err > 0.0:
                fac = max(0.2, min(0.9 * (tol * h / err) ** 0.25, 4.0))
            dr = h * fac
            if trial[4] <= 0.0:
                # first zero of J: bisection on the step length
                lo = 0.0
                hi = h
                while hi - lo > 1e-9:
                    mid = 0.5 * (lo + hi)
                    _rk4(padded, s0, ds, dth, y, mid, half, k1, k2, k3, k4, tmp, buf, ws, dws,
                         wt, dwt)
                    if half[4] > 0.0:
                        lo = mid
                    else:
                        hi = mid
                mid = 0.5 * (lo + hi)
                _rk4(padded, s0, ds, dth, y, mid, half, k1, k2, k3, k4, tmp, buf, ws, dws, wt, dwt)
                r += mid
                for c in range(6):
                    y[c] = half[c]
                _record(padded, s0, ds, dth, r, y, samples[n, cnt], buf, ws, dws, wt, dwt)
                cnt += 1
                code = CONJUGATE
                break
            if trial[0] > rho_max:
                # land on the outer circle: regula falsi on the step length
                lo = 0.0
                rlo = y[0]
                hi = h
                rhi = trial[0]
                hs = h
                for _ in range(60):
                    hs = lo + (hi - lo) * (rho_max - rlo) / (rhi - rlo)
                    _rk4(padded, s0, ds, dth, y, hs, half, k1, k2, k3, k4, tmp, buf, ws, dws,
                         wt, dwt)
                    rv = half[0]
                    if abs(rv - rho_max) <= 1e-13 * rho_max:
                        break
                    if rv < rho_max:
                        lo = hs
                        rlo = rv
                    else:
                        hi = hs
                        rhi = rv
                half[0] = rho_max
                r += hs
                for c in range(6):
                    y[c] = half[c]
                _record(padded, s0, ds, dth, r, y, samples[n, cnt], buf, ws, dws, wt, dwt)
                cnt += 1
                code = EXIT
                break
            if trial[0] < rho_min:
                code = INNER_EXIT
                break
            r += h
            for c in range(6):
                y[c] = trial[c]
            _record(padded, s0, ds, dth, r, y, samples[n, cnt], buf, ws, dws, wt, dwt)
            cnt += 1
        counts[n] = cnt
        codes[n] = code


# ---------------------------------------------------------------------------
# lockstep numpy fallback: identical algorithm, rays advanced together


def _cr_weights_vec(t):
    t2 = t * t
    t3 = t2 * t
    w = np.stack([0.5 * (-t3 + 2.0 * t2 - t), 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
                  0.5 * (-3.0 * t3 + 4.0 * t2 + t), 0.5 * (t3 - t2)])
    dw = np.stack([0.5 * (-3.0 * t2 + 4.0 * t - 1.0), 0.5 * (9.0 * t2 - 10.0 * t),
                   0.5 * (-9.0 * t2 + 8.0 * t + 1.0), 0.5 * (3.0 * t2 - 2.0 * t)])
    return w, dw


def interp_points(padded, s0, ds, dth, rho, th):
    """Vectorised :func:`interp_point`: returns ``(4, 3, n)``."""
    n = padded.shape[1] - 2
    m = padded.shape[2]
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(rho > 0.0, (np.log(np.where(rho > 0.0, rho, 1.0)) - s0) / ds, -1.0)
    u = np.where(u == u, u, -1.0)
    i = np.clip(np.floor(u), 0, n - 2).astype(np.int64)
    tu = u - i
    v = th / dth
    v = np.where(np.abs(v) < 1e15, v, 0.0)
    j = np.floor(v).astype(np.int64)
    tv = v - j
    ws, dws = _cr_weights_vec(tu)
    wt, dwt = _cr_weights_vec(tv)
    rows = i[None, :] + np.arange(4)[:, None]                # (4, n)
    cols = (j[None, :] - 1 + np.arange(4)[:, None]) % m      # (4, n)
    patch = padded[:, rows[:, None, :], cols[None, :, :]]    # (4 fields, 4 a, 4 b, n)
    acc = np.einsum("fabn,bn->fan", patch, wt)
    acc_t = np.einsum("fabn,bn->fan", patch, dwt)
    out = np.empty((4, 3, rho.size))
    out[:, 0] = np.einsum("fan,an->fn", acc, ws)
    out[:, 1] = np.einsum("fan,an->fn", acc, dws) / ds
    out[:, 2] = np.einsum("fan,an->fn", acc_t, ws) / dth
    return out


def _rhs_vec(padded, s0, ds, dth, y):
    rho = y[0]
    buf = interp_points(padded, s0, ds, dth, rho, y[1])
    p1, p2, p3, k = buf[0, 0], buf[1, 0], buf[2, 0], buf[3, 0]
    g11 = p1
    g12 = rho * p2
    g22 = rho * rho * p3
    d1g11 = buf[0, 1] / rho
    d1g12 = p2 + buf[1, 1]
    d1g22 = rho * (2.0 * p3 + buf[2, 1])
    d2g11 = buf[0, 2]
    d2g12 = rho * buf[1, 2]
    d2g22 = rho * rho * buf[2, 2]
    c1_11 = 0.5 * d1g11
    c1_12 = 0.5 * d2g11
    c1_22 = d2g12 - 0.5 * d1g22
    c2_11 = d1g12 - 0.5 * d2g11
    c2_12 = 0.5 * d1g22
    c2_22 = 0.5 * d2g22
    det = g11 * g22 - g12 * g12
    i11 = g22 / det
    i12 = -g12 / det
    i22 = g11 / det
    v1, v2 = y[2], y[3]
    q1 = c1_11 * v1 * v1 + 2.0 * c1_12 * v1 * v2 + c1_22 * v2 * v2
    q2 = c2_11 * v1 * v1 + 2.0 * c2_12 * v1 * v2 + c2_22 * v2 * v2
    return np.stack([v1, v2, -(i11 * q1 + i12 * q2), -(i12 * q1 + i22 * q2), y[5], -k * y[4]])


def _rk4_vec(padded, s0, ds, dth, y, h):
    k1 = _rhs_vec(padded, s0, ds, dth, y)
    k2 = _rhs_vec(padded, s0, ds, dth, y + 0.5 * h * k1)
    k3 = _rhs_vec(padded, s0, ds, dth, y + 0.5 * h * k2)
    k4 = _rhs_vec(padded, s0, ds, dth, y + h * k3)
    return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _record_vec(padded, s0, ds, dth, r, y):
    rho = y[0]
    buf = interp_points(padded, s0, ds, dth, rho, y[1])
    p1, p2, p3 = buf[0, 0], buf[1, 0], buf[2, 0]
    v1, v2 = y[2], y[3]
    speed = p1 * v1 * v1 + 2.0 * rho * p2 * v1 * v2 + rho * rho * p3 * v2 * v2
    out = np.empty((rho.size, N_COLS))
    out[:, R] = r
    out[:, RHO] = rho
    out[:, THETA] = y[1]
    out[:, VRHO] = v1
    out[:, VTHETA] = v2
    out[:, JAC] = y[4]
    out[:, DJAC] = y[5]
    out[:, CURV] = buf[3, 0]
    out[:, DCURV] = buf[3, 1] / rho * v1 + buf[3, 2] * v2
    out[:, SPEED] = speed - 1.0
    return out


def _step_error_vec(a, b):
    rho = np.abs(b[0])
    e = np.maximum.reduce([np.abs(a[0] - b[0]), rho * np.abs(a[1] - b[1]), np.abs(a[4] - b[4]),
                           rho * np.abs(a[2] - b[2]), rho * rho * np.abs(a[3] - b[3]),
                           rho * np.abs(a[5] - b[5])])
    return e / 15.0


def shoot_rays_numpy(padded, s0, ds, dth, rho_min, rho_max, init, r_init, r_max, tol,
                     dr_rel, capacity, samples, counts, codes):
    """Same contract as :func:`shoot_rays_compiled`."""
    args = (padded, s0, ds, dth)
    n_rays = init.shape[0]
    y = np.ascontiguousarray(init.T, dtype=float).copy()
    r = np.array(r_init, dtype=float)
    dr = 0.01 * y[0]
    cnt = np.ones(n_rays, dtype=np.int64)
    code = np.full(n_rays, STEP_FAILURE, dtype=np.int64)
    active = np.ones(n_rays, dtype=bool)
    samples[np.arange(n_rays), 0] = _record_vec(*args, r, y)

    def finish(sel, c):
        code[sel] = c
        active[sel] = False

    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        while active.any():
            idx = np.flatnonzero(active)
            cap = idx[cnt[idx] >= capacity]
            finish(cap, STEP_FAILURE)
            idx = idx[cnt[idx] < capacity]
            done = idx[r[idx] >= r_max * (1.0 - 1e-15)]
            finish(done, R_MAX)
            idx = idx[r[idx] < r_max * (1.0 - 1e-15)]
            if idx.size == 0:
                continue
            yi = y[:, idx]
            h = np.minimum(np.minimum(dr[idx], dr_rel * yi[0]), r_max - r[idx])
            tiny = h < 1e-13 * np.maximum(yi[0], 1e-300)
            finish(idx[tiny], STEP_FAILURE)
            idx, yi, h = idx[~tiny], yi[:, ~tiny], h[~tiny]
            if idx.size == 0:
                continue
            full = _rk4_vec(*args, yi, h)
            half = _rk4_vec(*args, yi, 0.5 * h)
            half2 = _rk4_vec(*args, half, 0.5 * h)
            err = _step_error_vec(half2, full)
            ok = err <= tol * h
            rej = ~ok
            if rej.any():
                e = err[rej]
                fac = np.where(e == e, np.clip(0.9 * (tol * h[rej] / e) ** 0.25, 0.1, 0.9), 0.1)
                dr[idx[rej]] = h[rej] * fac
            idx, yi, h, full, half2, err = (idx[ok], yi[:, ok], h[ok], full[:, ok], half2[:, ok],
                                            err[ok])
            if idx.size == 0:
                continue
            trial = half2 + (half2 - full) / 15.0
            safe = np.where(err > 0.0, err, 1.0)
            fac = np.where(err > 0.0, np.clip(0.9 * (tol * h / safe) ** 0.25, 0.2, 4.0), 4.0)
            dr[idx] = h * fac

            conj = trial[4] <= 0.0
            if conj.any():
                ci, yc = idx[conj], yi[:, conj]
                lo = np.zeros(ci.size)
                hi = h[conj].copy()
                todo = hi - lo > 1e-9
                while todo.any():
                    mid = 0.5 * (lo[todo] + hi[todo])
                    st = _rk4_vec(*args, yc[:, todo], mid)
                    pos = st[4] > 0.0
                    t_idx = np.flatnonzero(todo)
                    lo[t_idx[pos]] = mid[pos]
                    hi[t_idx[~pos]] = mid[~pos]
                    todo = hi - lo > 1e-9
                mid = 0.5 * (lo + hi)
                st = _rk4_vec(*args, yc, mid)
                r[ci] += mid
                y[:, ci] = st
                samples[ci, cnt[ci]] = _record_vec(*args, r[ci], st)
                cnt[ci] += 1
                finish(ci, CONJUGATE)

            out = ~conj & (trial[0] > rho_max)
            if out.any():
                oi, yo = idx[out], yi[:, out]
                lo = np.zeros(oi.size)
                hi = h[out].copy()
                rlo = yo[0].copy()
                rhi = trial[0, out].copy()
                hs = hi.copy()
                st = np.empty_like(yo)
                todo = np.ones(oi.size, dtype=bool)
                for _ in range(60):
                    if not todo.any():
                        break
                    t_idx = np.flatnonzero(todo)
                    hs[t_idx] = lo[t_idx] + (hi[t_idx] - lo[t_idx]) * (rho_max - rlo[t_idx]) / (
                        rhi[t_idx] - rlo[t_idx])
                    st[:, t_idx] = _rk4_vec(*args, yo[:, t_idx], hs[t_idx])
                    rv = st[0, t_idx]
                    conv = np.abs(rv - rho_max) <= 1e-13 * rho_max
                    below = ~conv & (rv < rho_max)
                    above = ~conv & ~below
                    lo[t_idx[below]] = hs[t_idx[below]]
                    rlo[t_idx[below]] = rv[below]
                    hi[t_idx[above]] = hs[t_idx[above]]
                    rhi[t_idx[above]] = rv[above]
                    todo[t_idx[conv]] = False
                st[0] = rho_max
                r[oi] += hs
                y[:, oi] = st
                samples[oi, cnt[oi]] = _record_vec(*args, r[oi], st)
                cnt[oi] += 1
                finish(oi, EXIT)

            inner = ~conj & ~out & (trial[0] < rho_min)
            finish(idx[inner], INNER_EXIT)

            mv = ~conj & ~out & ~inner
            if mv.any():
                mi = idx[mv]
                r[mi] += h[mv]
                y[:, mi] = trial[:, mv]
                samples[mi, cnt[mi]] = _record_vec(*args, r[mi], trial[:, mv])
                cnt[mi] += 1
    counts[:] = cnt
    codes[:] = code
