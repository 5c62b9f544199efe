"""Radial curvature bookkeeping in chart and geodesic polar coordinates.

Along each geodesic ray, ``Omega(r) = int_0^r K J ds`` (so ``J' = 1 - Omega``),
``Omega_bar = (1/r) int_0^r Omega`` and ``G_curv = 1 - Omega_bar``.  The chart
profile ``kappa(rho) = int_{B_rho} K dA`` is the cumulative node quadrature of
``K`` times the area density.  The function

    f(r) = r int dphi G / m0 - 2 pi (r - r0)

satisfies ``f' = (2 pi - kappa~(r)) / m0 - 2 pi`` and ``f'' = -(1/m0) int dphi K G r``
where ``kappa~(r)`` is the curvature of the geodesic disc of radius ``r``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import CubicHermiteSpline

from . import _geodesic_kernels as gk
from .geodesics import GeodesicFan
from .geometry import ConeParams, Immersion, PolarGrid, gauss_curvature


class AdmissibleRangeError(ValueError):
    """Radius outside the window where the curvature deviation is defined."""


@dataclass(frozen=True, eq=False)
class CurvatureProfile:
    rho_values: np.ndarray
    kappa_values: np.ndarray
    area_density: np.ndarray

    def at(self, rho):
        """Piecewise-linear interpolation of ``kappa`` (constant below ``rho_min``)."""
        return np.interp(rho, self.rho_values, self.kappa_values)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rho_length", "kappa_dimensionless"])
        for r, k in zip(self.rho_values, self.kappa_values):
            w.writerow([f"{r:.12e}", f"{k:.12e}"])
        return buf.getvalue()


def kappa_profile(K: np.ndarray, area_density: np.ndarray, grid: PolarGrid) -> CurvatureProfile:
    """Cumulative ``int_{B_rho} K dA`` at every ring radius (trapezoid in ``log rho``)."""
    q = (K * area_density).mean(axis=1) * 2.0 * math.pi
    f = q * grid.rho**2
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * grid.ds)])
    cap = 0.5 * grid.rho_min**2 * q[0]
    return CurvatureProfile(np.array(grid.rho), cap + cum, area_density)


def immersion_profile(imm: Immersion) -> CurvatureProfile:
    K, A = gauss_curvature(imm)
    return kappa_profile(K, A, imm.grid)


def kappa_deviation(profile: CurvatureProfile, params: ConeParams, R: float,
                    C1: float, n_points: int = 4001) -> float:
    """``int_{2h}^{2h+R} |kappa(B_rho) - 2 pi (1 - m0)| d rho`` by the trapezoid rule."""
    h = params.h
    lo, hi = admissible_window(params, C1)
    if not (lo * (1 - 1e-12) <= R <= hi * (1 + 1e-12)):
        raise AdmissibleRangeError(f"R = {R} outside [{lo}, {hi}]")
    a, b = 2.0 * h, 2.0 * h + R
    inner = profile.rho_values[(profile.rho_values > a) & (profile.rho_values < b)]
    xs = np.unique(np.concatenate([np.linspace(a, b, n_points), inner]))
    target = 2.0 * math.pi * (1.0 - params.m0)
    return float(trapezoid(np.abs(profile.at(xs) - target), xs))


def admissible_window(params: ConeParams, C1: float) -> tuple[float, float]:
    h = params.h
    w = C1 * h * math.sqrt(params.log_h)
    return w, 1.0 - 2.0 * h - w


def deviation_scale(params: ConeParams, R: float) -> float:
    """``R^(1/2) h^(1/2) |log h|^(3/4)``."""
    return math.sqrt(R * params.h) * params.log_h**0.75


# ---------------------------------------------------------------------------
# along-ray quantities


@dataclass(frozen=True, eq=False)
class RayOmega:
    r: np.ndarray
    omega: np.ndarray
    omega_bar: np.ndarray
    G_curv: np.ndarray
    G_jacobi: np.ndarray


def _hermite_cumulative(x, f, df, f0=0.0):
    dx = np.diff(x)
    inc = 0.5 * dx * (f[1:] + f[:-1]) + dx * dx / 12.0 * (df[:-1] - df[1:])
    return f0 + np.concatenate([[0.0], np.cumsum(inc)])


def omega_fields(fan: GeodesicFan) -> list[RayOmega]:
    """``Omega``, ``Omega_bar`` and ``G_curv = 1 - Omega_bar`` along every ray."""
    out = []
    for ray in fan.rays:
        s = ray.samples
        r = s[:, gk.R]
        J = s[:, gk.JAC]
        dJ = s[:, gk.DJAC]
        K = s[:, gk.CURV]
        dK = s[:, gk.DCURV]
        q = K * J
        dq = dK * J + K * dJ
        omega = _hermite_cumulative(r, q, dq, 1.0 - dJ[0])
        launch = r[0] - J[0]
        integral = _hermite_cumulative(r, omega, q, launch)
        omega_bar = integral / r
        out.append(RayOmega(r, omega, omega_bar, 1.0 - omega_bar, J / r))
    return out


@dataclass(frozen=True, eq=False)
class FFunction:
    r: np.ndarray
    f: np.ndarray
    df: np.ndarray
    d2f: np.ndarray
    kappa_geodesic: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r_length", "f_length", "df_dimensionless", "d2f_inverse_length"])
        for row in zip(self.r, self.f, self.df, self.d2f):
            w.writerow([f"{v:.12e}" for v in row])
        return buf.getvalue()


def f_function(fan: GeodesicFan, omegas: list[RayOmega], params: ConeParams,
               r_grid: np.ndarray | None = None, r0: float | None = None) -> FFunction:
    """``f``, ``f'`` and ``f''`` on a common ``r`` grid, each by its own quadrature over ``phi``."""
    r0 = fan.r0 if r0 is None else r0
    if r0 is None:
        raise ValueError("fan has no r0; shoot it with ConeParams")
    r_lo = max(o.r[0] for o in omegas)
    r_hi = min(o.r[-1] for o in omegas)
    if r_grid is None:
        top = fan.r_star if fan.r_star is not None else r_hi
        r_grid = np.linspace(max(r0, r_lo), min(top, r_hi), 2001)
    r_grid = np.asarray(r_grid, float)
    m0 = params.m0
    n = len(omegas)
    G = np.empty((n, r_grid.size))
    Om = np.empty_like(G)
    KGr = np.empty_like(G)
    for k, (o, ray) in enumerate(zip(omegas, fan.rays)):
        s = ray.samples
        # G_curv and Omega as Hermite splines in r (derivatives known in closed form)
        dG = (o.omega_bar - o.omega) / o.r
        G[k] = CubicHermiteSpline(o.r, o.G_curv, dG)(r_grid)
        q = s[:, gk.CURV] * s[:, gk.JAC]
        dq = s[:, gk.DCURV] * s[:, gk.JAC] + s[:, gk.CURV] * s[:, gk.DJAC]
        Om[k] = CubicHermiteSpline(o.r, o.omega, q)(r_grid)
        KGr[k] = CubicHermiteSpline(o.r, q, dq)(r_grid)
    dphi = 2.0 * math.pi / n
    f = r_grid * G.sum(axis=0) * dphi / m0 - 2.0 * math.pi * (r_grid - r0)
    kappa_geo = Om.sum(axis=0) * dphi
    df = (2.0 * math.pi - kappa_geo) / m0 - 2.0 * math.pi
    d2f = -KGr.sum(axis=0) * dphi / m0
    return FFunction(r_grid, f, df, d2f, kappa_geo)


def interpolation_check(ff: FFunction) -> float | None:
    """``|f'|_1 / (|f|_1^(1/2) (|f''|_1 + (|f(a)| + |f(b)|)/L)^(1/2))``; ``None`` if ``f = 0``."""
    r = ff.r
    L = r[-1] - r[0]
    nf = trapezoid(np.abs(ff.f), r)
    if nf <= 1e-300 * max(L, 1.0):
        return None
    n1 = trapezoid(np.abs(ff.df), r)
    n2 = trapezoid(np.abs(ff.d2f), r) + (abs(ff.f[0]) + abs(ff.f[-1])) / L
    if n2 <= 0.0:
        return None
    return float(n1 / math.sqrt(nf * n2))


def domain_change_correction(profile: CurvatureProfile, ff: FFunction, params: ConeParams,
                             R: float, fan: GeodesicFan) -> float:
    """``int_{2h}^{2h+R} |kappa(B_rho) - kappa~(B~_{rho + r0 - 2h})| d rho``.

    Measures the difference between chart discs and geodesic discs that the
    deviation bound absorbs.
    """
    h = params.h
    xs = np.linspace(2.0 * h, 2.0 * h + R, 2001)
    rr = xs + fan.r0 - 2.0 * h
    inside = (rr >= ff.r[0]) & (rr <= ff.r[-1])
    if not inside.any():
        raise AdmissibleRangeError("geodesic radii do not overlap the requested window")
    kg = np.interp(rr[inside], ff.r, ff.kappa_geodesic)
    return float(trapezoid(np.abs(profile.at(xs[inside]) - kg), xs[inside]))

