"""Geodesic polar coordinates of the induced metric by shooting from the origin.

Rays start on the innermost ring (the chart is flat to high order there for
every map in the test families) in the radial chart direction, carrying the
arclength ``r``, the chart position, and the Jacobi field ``J`` of the polar
variation.  The fan is then resampled onto the polar grid to give ``r(rho,
theta)``, ``phi(rho, theta)``, the transition matrix ``Gamma`` and the two
independent estimates of the ``G`` factor in ``g = dr^2 + G^2 r^2 dphi^2``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from . import _geodesic_kernels as gk
from ._accel import use_numba
from .geometry import ConeParams, Immersion, PolarGrid, d_rho, d_theta


class NonPositiveMetricError(ValueError):
    """A metric sample is not positive definite."""


class Assumption1Violation(RuntimeError):
    """The exponential map fails to be a diffeomorphism onto the chart."""

    def __init__(self, reason: str, locations: list):
        self.reason = reason
        self.locations = locations
        head = ", ".join(str(loc) for loc in locations[:5])
        super().__init__(f"{reason} at {len(locations)} location(s): {head}")


# ---------------------------------------------------------------------------
# chart metric


@dataclass(frozen=True, eq=False)
class ChartField:
    """Frame metric components and Gauss curvature at the grid nodes plus launch data."""

    grid: PolarGrid
    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray
    K: np.ndarray
    r_launch: np.ndarray
    J_launch: np.ndarray
    dJ_launch: np.ndarray

    def __post_init__(self):
        det = self.p1 * self.p3 - self.p2**2
        bad = ~((self.p1 > 0) & (self.p3 > 0) & (det > 0))
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise NonPositiveMetricError(f"metric not positive definite at node {idx}")

    @classmethod
    def from_arrays(cls, grid: PolarGrid, p1, p2, p3, K, r_launch=None) -> "ChartField":
        shape = grid.shape
        p1, p2, p3, K = (np.broadcast_to(np.asarray(a, float), shape).copy()
                         for a in (p1, p2, p3, K))
        rho = grid.rho[:, None]
        q = rho * np.sqrt(p1 * p3 - p2**2) / np.sqrt(p1)
        J = q[0]
        dJ = d_rho(grid, q)[0] / np.sqrt(p1[0])
        if r_launch is None:
            r_launch = grid.rho[0] * np.sqrt(p1[0])
        r_launch = np.broadcast_to(np.asarray(r_launch, float), (grid.n_theta,)).copy()
        return cls(grid, p1, p2, p3, K, r_launch, J, dJ)

    @classmethod
    def from_immersion(cls, imm: Immersion) -> "ChartField":
        f = imm.fields
        r_launch = np.linalg.norm(imm.positions[0] - imm.center_position, axis=-1)
        return cls.from_arrays(imm.grid, f.metric.p1, f.metric.p2, f.metric.p3, f.gauss,
                               r_launch)

    def padded(self) -> np.ndarray:
        return gk.pad_fields(np.stack([self.p1, self.p2, self.p3, self.K]))

    def interpolate(self, rho, theta) -> np.ndarray:
        """``(4, 3, n)`` array of (value, d/ds, d/dtheta) for ``p1, p2, p3, K``."""
        rho = np.atleast_1d(np.asarray(rho, float))
        theta = np.atleast_1d(np.asarray(theta, float))
        rho, theta = np.broadcast_arrays(rho, theta)
        g = self.grid
        return gk.interp_points(self.padded(), math.log(g.rho_min), g.ds, g.dtheta,
                                rho.ravel(), theta.ravel())


def christoffel_field(chart: ChartField, rho=None, theta=None) -> dict:
    """Christoffel symbols of ``g = p1 drho^2 + 2 rho p2 drho dtheta + rho^2 p3 dtheta^2``.

    Evaluated at the grid nodes by default, otherwise at the given points.
    Keys are ``"<upper>_<lower>"`` with ``r`` for rho and ``t`` for theta.
    """
    if rho is None:
        rr, tt = np.meshgrid(chart.grid.rho, chart.grid.theta, indexing="ij")
        shape = rr.shape
    else:
        rr, tt = np.broadcast_arrays(np.asarray(rho, float), np.asarray(theta, float))
        shape = rr.shape
    rr = rr.ravel()
    buf = chart.interpolate(rr, tt.ravel())
    p1, p2, p3 = buf[0, 0], buf[1, 0], buf[2, 0]
    if np.any(p1 <= 0) or np.any(p3 <= 0) or np.any(p1 * p3 - p2**2 <= 0):
        raise NonPositiveMetricError("interpolated metric not positive definite")
    g11, g12, g22 = p1, rr * p2, rr * rr * p3
    d1g11 = buf[0, 1] / rr
    d1g12 = p2 + buf[1, 1]
    d1g22 = rr * (2.0 * p3 + buf[2, 1])
    d2g11 = buf[0, 2]
    d2g12 = rr * buf[1, 2]
    d2g22 = rr * rr * buf[2, 2]
    first = {
        (1, 1, 1): 0.5 * d1g11, (1, 1, 2): 0.5 * d2g11, (1, 2, 2): d2g12 - 0.5 * d1g22,
        (2, 1, 1): d1g12 - 0.5 * d2g11, (2, 1, 2): 0.5 * d1g22, (2, 2, 2): 0.5 * d2g22,
    }
    det = g11 * g22 - g12 * g12
    inv = {(1, 1): g22 / det, (1, 2): -g12 / det, (2, 2): g11 / det}
    inv[(2, 1)] = inv[(1, 2)]
    names = {1: "r", 2: "t"}
    out = {}
    for up in (1, 2):
        for (i, j) in ((1, 1), (1, 2), (2, 2)):
            val = inv[(up, 1)] * first[(1, i, j)] + inv[(up, 2)] * first[(2, i, j)]
            out[f"{names[up]}_{names[i]}{names[j]}"] = val.reshape(shape)
    return out


# ---------------------------------------------------------------------------
# rays and fans


@dataclass(frozen=True, eq=False)
class GeodesicRay:
    phi0: float
    samples: np.ndarray
    termination: str

    @property
    def r(self):
        return self.samples[:, gk.R]

    @property
    def rho(self):
        return self.samples[:, gk.RHO]

    @property
    def theta(self):
        return self.samples[:, gk.THETA]

    @property
    def J(self):
        return self.samples[:, gk.JAC]

    @property
    def dJ(self):
        return self.samples[:, gk.DJAC]

    @property
    def K(self):
        return self.samples[:, gk.CURV]

    @property
    def max_speed_deviation(self) -> float:
        return float(np.max(np.abs(self.samples[:, gk.SPEED])))

    def hermite(self) -> CubicHermiteSpline:
        """``(r, theta, J)`` as a Hermite spline in ``rho`` (requires monotone ``rho``)."""
        s = self.samples
        vr = s[:, gk.VRHO]
        y = np.stack([s[:, gk.R], s[:, gk.THETA], s[:, gk.JAC]], axis=1)
        dy = np.stack([1.0 / vr, s[:, gk.VTHETA] / vr, s[:, gk.DJAC] / vr], axis=1)
        return CubicHermiteSpline(s[:, gk.RHO], y, dy, axis=0)


@dataclass(eq=False)
class GeodesicFan:
    chart: ChartField
    rays: list[GeodesicRay]
    r0: float | None = None
    r_star: float | None = None
    C1: float | None = None
    params: ConeParams | None = None
    _polar: "PolarFields | None" = field(default=None, repr=False)

    @property
    def grid(self) -> PolarGrid:
        return self.chart.grid

    @property
    def phi0(self) -> np.ndarray:
        return np.array([ray.phi0 for ray in self.rays])

    def terminations(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for ray in self.rays:
            out[ray.termination] = out.get(ray.termination, 0) + 1
        return out

    def max_speed_deviation(self) -> float:
        return max(ray.max_speed_deviation for ray in self.rays)

    def summary(self) -> dict:
        return {
            "n_rays": len(self.rays),
            "terminations": self.terminations(),
            "max_speed_deviation": self.max_speed_deviation(),
            "r0": self.r0,
            "r_star": self.r_star,
            "C1": self.C1,
        }

    def rays_csv(self, stride: int = 1) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["phi0_rad", "r_length", "rho_length", "theta_rad", "J_length",
                    "dJ_dimensionless", "K_inverse_length_sq"])
        for ray in self.rays:
            for s in ray.samples[::stride]:
                w.writerow([f"{ray.phi0:.12e}"] + [f"{s[c]:.12e}" for c in
                                                   (gk.R, gk.RHO, gk.THETA, gk.JAC, gk.DJAC,
                                                    gk.CURV)])
        return buf.getvalue()


def _launch_state(chart: ChartField, phi: np.ndarray):
    g = chart.grid
    th = g.theta
    def periodic(vals):
        return np.interp(phi, np.append(th, 2 * math.pi), np.append(vals, vals[0]))
    p1 = periodic(chart.p1[0])
    init = np.zeros((phi.size, 6))
    init[:, 0] = g.rho[0]
    init[:, 1] = phi
    init[:, 2] = 1.0 / np.sqrt(p1)
    init[:, 4] = periodic(chart.J_launch)
    init[:, 5] = periodic(chart.dJ_launch)
    return init, periodic(chart.r_launch)


def shoot_rays(chart: ChartField, phi0, r_max: float = math.inf, tol: float = 1e-8,
               dr_rel: float = 0.005) -> list[GeodesicRay]:
    g = chart.grid
    phi = np.mod(np.atleast_1d(np.asarray(phi0, float)), 2 * math.pi)
    init, r_init = _launch_state(chart, phi)
    span = math.log(g.rho_max / g.rho_min)
    capacity = int(6.0 * span / dr_rel) + 2000
    if math.isfinite(r_max):
        capacity += int(6.0 * r_max / (dr_rel * g.rho_min))
        capacity = min(capacity, 200000)
    samples = np.zeros((phi.size, capacity, gk.N_COLS))
    counts = np.zeros(phi.size, dtype=np.int64)
    codes = np.zeros(phi.size, dtype=np.int64)
    kernel = gk.shoot_rays_compiled if use_numba() else gk.shoot_rays_numpy
    kernel(chart.padded(), math.log(g.rho_min), g.ds, g.dtheta, g.rho_min, g.rho_max,
           init, r_init, float(r_max), tol, dr_rel, capacity, samples, counts, codes)
    return [GeodesicRay(float(p), samples[k, :counts[k]].copy(), gk.TERMINATION_NAMES[codes[k]])
            for k, p in enumerate(phi)]


def shoot_geodesic(chart: ChartField, phi0: float, r_max: float = math.inf,
                   tol: float = 1e-8, dr_rel: float = 0.005) -> GeodesicRay:
    return shoot_rays(chart, [phi0], r_max, tol, dr_rel)[0]


def shoot_fan(chart: ChartField, params: ConeParams | None = None, n_rays: int | None = None,
              r_max: float = math.inf, tol: float = 1e-8, dr_rel: float = 0.005) -> GeodesicFan:
    """One ray per launch angle on a uniform grid (default: one per grid angle)."""
    n = chart.grid.n_theta if n_rays is None else int(n_rays)
    if n < chart.grid.n_theta:
        raise ValueError("ray count must be at least n_theta")
    phi = 2.0 * math.pi * np.arange(n) / n
    fan = GeodesicFan(chart, shoot_rays(chart, phi, r_max, tol, dr_rel), params=params)
    if params is not None:
        _fill_constants(fan, params)
    return fan


def _fill_constants(fan: GeodesicFan, params: ConeParams) -> None:
    h = params.h
    rho2h = 2.0 * h
    vals = []
    for ray in fan.rays:
        if ray.rho[0] <= rho2h <= ray.rho[-1] and np.all(np.diff(ray.rho) > 0):
            vals.append(float(ray.hermite()(rho2h)[0]))
    if len(vals) != len(fan.rays) or fan.grid.rho_max < rho2h:
        return
    fan.r0 = max(vals)
    try:
        pf = polar_fields(fan)
    except Assumption1Violation:
        return
    fan.C1 = linf_diagnostic(pf, fan.r0, params)["C1"]
    fan.r_star = 1.0 - 2.0 * h + fan.r0 - fan.C1 * h * math.sqrt(params.log_h)


# ---------------------------------------------------------------------------
# resampling onto the polar grid


@dataclass(frozen=True, eq=False)
class PolarFields:
    grid: PolarGrid
    r: np.ndarray
    phi: np.ndarray
    J: np.ndarray


def _wrap(x):
    return (x + math.pi) % (2.0 * math.pi) - math.pi


def polar_fields(fan: GeodesicFan) -> PolarFields:
    """Geodesic polar coordinates ``(r, phi)`` and ``J`` at every grid node."""
    if fan._polar is not None:
        return fan._polar
    grid = fan.grid
    early = [(round(ray.phi0, 12), ray.termination) for ray in fan.rays
             if ray.termination != "exit"]
    if early:
        raise Assumption1Violation("early ray termination", early)
    nr = len(fan.rays)
    Rk = np.empty((nr, grid.n_rho))
    Tk = np.empty((nr, grid.n_rho))
    Jk = np.empty((nr, grid.n_rho))
    for k, ray in enumerate(fan.rays):
        if not np.all(np.diff(ray.rho) > 0):
            bad = int(np.argmin(np.diff(ray.rho)))
            raise Assumption1Violation("ray turns back in rho",
                                       [(round(ray.phi0, 12), float(ray.rho[bad]))])
        vals = ray.hermite()(grid.rho)
        Rk[k], Tk[k], Jk[k] = vals[:, 0], vals[:, 1], vals[:, 2]
    phi = fan.phi0
    two_pi = 2.0 * math.pi
    r_out = np.empty(grid.shape)
    phi_out = np.empty(grid.shape)
    J_out = np.empty(grid.shape)
    folds = []
    for i in range(grid.n_rho):
        x = phi + _wrap(Tk[:, i] - phi)
        gaps = np.diff(np.append(x, x[0] + two_pi))
        if np.any(gaps <= 0):
            k = int(np.argmin(gaps))
            folds.append((i, float(grid.rho[i]), round(float(phi[k]), 12)))
            continue
        xs = np.append(x, x[0] + two_pi)
        t = x[0] + np.mod(grid.theta - x[0], two_pi)
        d = np.append(phi - x, phi[0] - x[0])
        phi_out[i] = grid.theta + CubicSpline(xs, d, bc_type="periodic")(t)
        r_out[i] = CubicSpline(xs, np.append(Rk[:, i], Rk[0, i]), bc_type="periodic")(t)
        J_out[i] = CubicSpline(xs, np.append(Jk[:, i], Jk[0, i]), bc_type="periodic")(t)
    if folds:
        raise Assumption1Violation("fold-over of (rho, theta) -> (r, phi)", folds)
    pf = PolarFields(grid, r_out, phi_out, J_out)
    fan._polar = pf
    return pf


@dataclass(frozen=True, eq=False)
class GammaField:
    gamma: np.ndarray          # (n_rho, n_theta, 2, 2)
    det: np.ndarray
    gamma_tilde: np.ndarray
    identity_residual: float


def gamma_field(polar: PolarFields) -> GammaField:
    """``Gamma = [[d_rho r, rho^-1 d_theta r], [r d_rho phi, r rho^-1 d_theta phi]]``."""
    grid = polar.grid
    rho = grid.rho[:, None]
    r = polar.r
    dphi = np.unwrap(np.unwrap(_wrap(polar.phi - grid.theta[None, :]), axis=1), axis=0)
    gam = np.empty(grid.shape + (2, 2))
    gam[..., 0, 0] = d_rho(grid, r)
    gam[..., 0, 1] = d_theta(grid, r) / rho
    gam[..., 1, 0] = r * d_rho(grid, dphi)
    gam[..., 1, 1] = r * (1.0 + d_theta(grid, dphi)) / rho
    det = np.linalg.det(gam)
    bad = ~(det > 0)
    if bad.any():
        locs = [(int(i), int(j)) for i, j in np.argwhere(bad)[:20]]
        raise Assumption1Violation("det Gamma <= 0", locs)
    inv = np.linalg.inv(gam)
    resid = float(np.max(np.abs(gam @ inv - np.eye(2))))
    return GammaField(gam, det, inv, resid)


@dataclass(frozen=True, eq=False)
class GFactor:
    metric: np.ndarray
    jacobi: np.ndarray

    @property
    def max_disagreement(self) -> float:
        return float(np.max(np.abs(self.metric - self.jacobi)))


def g_factor(fan: GeodesicFan, gamma: GammaField | None = None) -> GFactor:
    """``G`` from the metric applied to ``d_phi`` and from the Jacobi field ``J/r``."""
    pf = polar_fields(fan)
    gamma = gamma or gamma_field(pf)
    c = gamma.gamma_tilde[..., :, 1]
    ch = fan.chart
    quad = ch.p1 * c[..., 0] ** 2 + 2.0 * ch.p2 * c[..., 0] * c[..., 1] + ch.p3 * c[..., 1] ** 2
    return GFactor(np.sqrt(quad), pf.J / pf.r)


# ---------------------------------------------------------------------------
# diagnostics


def assumption1_report(fan: GeodesicFan, gamma: GammaField | None = None) -> dict:
    """Aggregate verdict: no conjugate points, no fold-over, ``det Gamma > 0``."""
    report = {"passed": True, "conjugate_points": [], "early_terminations": [],
              "fold_over": [], "nonpositive_det": []}
    for ray in fan.rays:
        if ray.termination == "conjugate":
            report["conjugate_points"].append({"phi0": ray.phi0, "r": float(ray.r[-1])})
        elif ray.termination != "exit":
            report["early_terminations"].append({"phi0": ray.phi0,
                                                 "reason": ray.termination,
                                                 "r": float(ray.r[-1])})
    if report["conjugate_points"] or report["early_terminations"]:
        report["passed"] = False
        return report
    try:
        pf = polar_fields(fan)
        if gamma is None:
            gamma = gamma_field(pf)
    except Assumption1Violation as exc:
        key = "fold_over" if "fold" in exc.reason or "turns" in exc.reason else "nonpositive_det"
        report[key] = [list(loc) if isinstance(loc, tuple) else loc for loc in exc.locations]
        report["passed"] = False
        return report
    if np.any(gamma.det <= 0):
        report["nonpositive_det"] = [list(map(int, ij)) for ij in np.argwhere(gamma.det <= 0)]
        report["passed"] = False
    return report


def assumption1_summary(imm: Immersion, params: ConeParams) -> dict:
    try:
        chart = ChartField.from_immersion(imm)
    except NonPositiveMetricError as exc:
        return {"passed": False, "error": str(exc)}
    return assumption1_report(shoot_fan(chart, params))


def linf_diagnostic(polar: PolarFields, r0: float, params: ConeParams) -> dict:
    """``sup_{rho >= 2h} |r - r0 - rho|`` and the implied constant ``C1``."""
    h = params.h
    sel = polar.grid.rho >= 2.0 * h * (1 - 1e-12)
    dev = float(np.max(np.abs(polar.r[sel] - r0 - polar.grid.rho[sel, None])))
    return {"sup_dev": dev, "C1": dev / (h * math.sqrt(params.log_h))}


def dist_so2(Q: np.ndarray) -> np.ndarray:
    """Frobenius distance of each 2x2 matrix to the rotation group."""
    a, b = Q[..., 0, 0], Q[..., 0, 1]
    c, d = Q[..., 1, 0], Q[..., 1, 1]
    sq = a * a + b * b + c * c + d * d + 2.0 - 2.0 * np.sqrt((a + d) ** 2 + (c - b) ** 2)
    return np.sqrt(np.maximum(sq, 0.0))


@dataclass(frozen=True)
class DetestimRecord:
    sup_det_deviation: float
    sup_dist_so2: float
    radial_integral: float
    dist_field: np.ndarray = field(repr=False, compare=False)

    def as_dict(self) -> dict:
        return {"sup_det_deviation": self.sup_det_deviation,
                "sup_dist_so2": self.sup_dist_so2,
                "radial_integral": self.radial_integral}


def _trapezoid_from(rho, vals, a, b):
    """``int_a^b`` of piecewise-linear data (columns) over ``rho``."""
    grid_pts = (rho > a) & (rho < b)
    xs = np.concatenate([[a], rho[grid_pts], [b]])
    cols = [np.array([np.interp(a, rho, v), *v[grid_pts], np.interp(b, rho, v)])
            for v in vals.T]
    return np.array([trapezoid(c, xs) for c in cols])


def detestim_diagnostics(fan: GeodesicFan, gamma: GammaField, params: ConeParams,
                         R: float | None = None, which: str = "metric") -> DetestimRecord:
    """``sup |G det Gamma / m0 - 1|`` over ``rho >= h``, ``dist(Q, SO(2))``, radial integral."""
    gf = g_factor(fan, gamma)
    G = gf.metric if which == "metric" else gf.jacobi
    grid = fan.grid
    m0, h = params.m0, params.h
    sel = grid.rho >= h * (1 - 1e-12)
    dev = np.abs(G * gamma.det / m0 - 1.0)
    Q = gamma.gamma.copy()
    Q[..., 1, :] *= G[..., None]
    Q[..., :, 1] /= m0
    dist = dist_so2(Q)
    R = grid.rho_max if R is None else R
    integ = _trapezoid_from(grid.rho, np.abs(gamma.gamma[..., 0, 0] - 1.0), 2.0 * h, R)
    return DetestimRecord(float(dev[sel].max()), float(dist[sel].max()), float(integ.max()),
                          dist)
