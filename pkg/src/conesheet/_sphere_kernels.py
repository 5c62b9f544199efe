"""Signed point-in-spherical-triangle accumulation (numba and numpy paths).

Sample points must be sorted by their ``z`` coordinate so that the candidates
of a triangle form a contiguous slice; the triangle's bounding cap then
prunes that slice.  Membership is strict on all three edges.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import njit


@njit
def _bounding_cap(a, b, c):
    dx = a[0] + b[0] + c[0]
    dy = a[1] + b[1] + c[1]
    dz = a[2] + b[2] + c[2]
    n = math.sqrt(dx * dx + dy * dy + dz * dz)
    if n < 1e-12:
        return 0.0, 0.0, 1.0, -1.0
    dx /= n
    dy /= n
    dz /= n
    cosa = min(dx * a[0] + dy * a[1] + dz * a[2],
               dx * b[0] + dy * b[1] + dz * b[2],
               dx * c[0] + dy * c[1] + dz * c[2])
    return dx, dy, dz, cosa


@njit
def _z_range(dz, cosa):
    if cosa <= 0.0:
        return -1.0, 1.0
    td = math.acos(max(-1.0, min(1.0, dz)))
    al = math.acos(min(1.0, cosa))
    lo = math.cos(min(math.pi, td + al))
    hi = math.cos(max(0.0, td - al))
    return lo - 1e-12, hi + 1e-12


@njit
def _det(a, b, c):
    return (a[0] * (b[1] * c[2] - b[2] * c[1])
            - a[1] * (b[0] * c[2] - b[2] * c[0])
            + a[2] * (b[0] * c[1] - b[1] * c[0]))


@njit
def _side(a, b, p):
    # edge normal first: swapping a and b negates it exactly, so shared edges never double count
    nx = a[1] * b[2] - a[2] * b[1]
    ny = a[2] * b[0] - a[0] * b[2]
    nz = a[0] * b[1] - a[1] * b[0]
    return p[0] * nx + p[1] * ny + p[2] * nz


@njit
def accumulate_compiled(verts, level, points, zsorted, out):
    """``out[level[t], k] += sign(t)`` for every sample ``k`` strictly inside triangle ``t``."""
    n_tri = verts.shape[0]
    for t in range(n_tri):
        a = verts[t, 0]
        b = verts[t, 1]
        c = verts[t, 2]
        o = _det(a, b, c)
        if o == 0.0:
            continue
        sgn = 1 if o > 0.0 else -1
        dx, dy, dz, cosa = _bounding_cap(a, b, c)
        zlo, zhi = _z_range(dz, cosa)
        k0 = np.searchsorted(zsorted, zlo)
        k1 = np.searchsorted(zsorted, zhi, side="right")
        lev = level[t]
        for k in range(k0, k1):
            p = points[k]
            if cosa > 0.0 and dx * p[0] + dy * p[1] + dz * p[2] < cosa - 1e-12:
                continue
            s1 = _side(a, b, p)
            s2 = _side(b, c, p)
            s3 = _side(c, a, p)
            if sgn > 0:
                if s1 > 0.0 and s2 > 0.0 and s3 > 0.0:
                    out[lev, k] += 1
            else:
                if s1 < 0.0 and s2 < 0.0 and s3 < 0.0:
                    out[lev, k] -= 1


def _det_rows(a, b, c):
    return np.einsum("...i,...i->...", a, np.cross(b, c))


def accumulate_numpy(verts, level, points, zsorted, out):
    """Same contract as :func:`accumulate_compiled`, vectorized over candidate samples."""
    o = _det_rows(verts[:, 0], verts[:, 1], verts[:, 2])
    d = verts.sum(axis=1)
    dn = np.linalg.norm(d, axis=1)
    for t in np.flatnonzero(o != 0.0):
        a, b, c = verts[t]
        if dn[t] < 1e-12:
            k0, k1, dd, cosa = 0, points.shape[0], None, -1.0
        else:
            dd = d[t] / dn[t]
            cosa = min(dd @ a, dd @ b, dd @ c)
            if cosa <= 0.0:
                zlo, zhi = -1.0, 1.0
            else:
                td = math.acos(max(-1.0, min(1.0, dd[2])))
                al = math.acos(min(1.0, cosa))
                zlo = math.cos(min(math.pi, td + al)) - 1e-12
                zhi = math.cos(max(0.0, td - al)) + 1e-12
            k0 = int(np.searchsorted(zsorted, zlo))
            k1 = int(np.searchsorted(zsorted, zhi, side="right"))
        if k1 <= k0:
            continue
        p = points[k0:k1]
        if cosa > 0.0:
            near = p @ dd >= cosa - 1e-12
        else:
            near = np.ones(k1 - k0, dtype=bool)
        s1 = p @ np.cross(a, b)
        s2 = p @ np.cross(b, c)
        s3 = p @ np.cross(c, a)
        if o[t] > 0.0:
            inside = near & (s1 > 0.0) & (s2 > 0.0) & (s3 > 0.0)
            out[level[t], k0:k1] += inside
        else:
            inside = near & (s1 < 0.0) & (s2 < 0.0) & (s3 < 0.0)
            out[level[t], k0:k1] -= inside
