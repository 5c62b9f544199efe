"""Gauss-map analysis on the unit sphere.

Brouwer degree fields of the normal map restricted to chart discs ``B_R``,
total-degree integrals, the isoperimetric function ``F(x) = sqrt(4 pi x - x^2)``
with the distance ``di`` to ``4 pi Z``, boundary variation, the coarea
cross-check by level-set perimeters, the Jensen lower bound and the dyadic
assembly of the final energy estimate.

The disc ``B_R`` is triangulated by a centre fan over the innermost ring and
two triangles per grid cell, all oriented counterclockwise in the chart, so a
triangle's image has positive orientation exactly where ``K > 0``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import trapezoid

from . import _sphere_kernels as sk
from ._accel import use_numba
from .curvature import CurvatureProfile
from .geometry import ConeParams, NormalField, d_theta

log = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi


class ResolutionError(RuntimeError):
    """Raster too coarse: a bin away from the boundary image has fractional coverage."""


class RegularValueError(ValueError):
    """Query point too close to the image of the boundary circle."""


class DyadicRangeError(ValueError):
    """Thickness too large for a nonempty dyadic range."""


# ---------------------------------------------------------------------------
# scalar functions


def F_iso(x):
    """``sqrt(4 pi x - x^2)`` with the argument clamped to ``[0, 4 pi]``."""
    xa = np.asarray(x, dtype=float)
    clamped = np.clip(xa, 0.0, FOUR_PI)
    if np.any(np.abs(clamped - xa) > 0.0):
        log.debug("F_iso clamped %d argument(s) into [0, 4 pi]", int(np.sum(clamped != xa)))
    out = np.sqrt(np.maximum(FOUR_PI * clamped - clamped * clamped, 0.0))
    return float(out) if out.ndim == 0 else out


def dist_4pi(x):
    """Distance to the nearest integer multiple of ``4 pi``."""
    xa = np.asarray(x, dtype=float)
    out = np.abs(xa - FOUR_PI * np.rint(xa / FOUR_PI))
    return float(out) if out.ndim == 0 else out


def F_tilde(x):
    return F_iso(dist_4pi(x))


# ---------------------------------------------------------------------------
# raster


@dataclass(frozen=True, eq=False)
class SphereRaster:
    """Equal-area latitude-band raster of ``S^2``.

    Band ``k`` holds ``n_k ~ 2 m sin(colatitude)`` bins and has ``z``-height
    ``2 n_k / N`` so every bin has area exactly ``4 pi / N``.  Bin ``j`` of a band
    spans longitudes ``[j, j + 1) * 2 pi / n_k``.  ``rotation`` maps the native
    frame to world coordinates.
    """

    n_bands: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        if self.n_bands < 2:
            raise ValueError("n_bands must be at least 2")
        q = np.asarray(self.rotation, dtype=float)
        if q.shape != (3, 3) or not np.allclose(q @ q.T, np.eye(3), atol=1e-12) \
                or np.linalg.det(q) < 0:
            raise ValueError("rotation must be a proper orthogonal 3x3 matrix")
        object.__setattr__(self, "rotation", q)

    @classmethod
    def with_seed(cls, n_bands: int, seed: int) -> "SphereRaster":
        from .surfaces import random_rotation
        return cls(n_bands, random_rotation(np.random.default_rng(seed)))

    @cached_property
    def band_counts(self) -> np.ndarray:
        m = self.n_bands
        colat = (np.arange(m) + 0.5) * math.pi / m
        return np.maximum(1, np.rint(2.0 * m * np.sin(colat))).astype(np.int64)

    @property
    def n_bins(self) -> int:
        return int(self.band_counts.sum())

    @property
    def bin_area(self) -> float:
        return FOUR_PI / self.n_bins

    @cached_property
    def weights(self) -> np.ndarray:
        return np.full(self.n_bins, self.bin_area)

    @cached_property
    def z_edges(self) -> np.ndarray:
        """Band boundaries from the south pole (``-1``) to the north pole (``1``)."""
        z = np.concatenate([[0.0], np.cumsum(2.0 * self.band_counts / self.n_bins)]) - 1.0
        z[-1] = 1.0
        return z

    @cached_property
    def band_start(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.band_counts)])

    @cached_property
    def band_of_bin(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_bands), self.band_counts)

    @cached_property
    def index_in_band(self) -> np.ndarray:
        return np.arange(self.n_bins) - self.band_start[self.band_of_bin]

    def _native_points(self, z_frac: float, lon_frac: float) -> np.ndarray:
        k = self.band_of_bin
        z0, z1 = self.z_edges[k], self.z_edges[k + 1]
        z = z0 + z_frac * (z1 - z0)
        lon = (self.index_in_band + lon_frac) * 2.0 * math.pi / self.band_counts[k]
        s = np.sqrt(np.maximum(1.0 - z * z, 0.0))
        return np.stack([s * np.cos(lon), s * np.sin(lon), z], axis=-1)

    @cached_property
    def native_centers(self) -> np.ndarray:
        return self._native_points(0.5, 0.5)

    @cached_property
    def centers(self) -> np.ndarray:
        """Bin centres in world coordinates."""
        return self.native_centers @ self.rotation.T

    @cached_property
    def subsamples(self) -> tuple[np.ndarray, ...]:
        """Native bin centres followed by the centroids of the four equal-area quarters."""
        quarters = tuple(self._native_points(zf, lf) for zf in (0.25, 0.75) for lf in (0.25, 0.75))
        return (self.native_centers,) + quarters

    @cached_property
    def bin_radius(self) -> np.ndarray:
        """Upper bound on the angular distance from a bin centre to its corners."""
        k = self.band_of_bin
        t0 = np.arccos(np.clip(self.z_edges[k], -1, 1))
        t1 = np.arccos(np.clip(self.z_edges[k + 1], -1, 1))
        dlon = 2.0 * math.pi / self.band_counts[k]
        smax = np.maximum(np.sin(t0), np.sin(t1))
        smax = np.where((t0 - math.pi / 2) * (t1 - math.pi / 2) <= 0, 1.0, smax)
        return 0.5 * np.hypot(t0 - t1, np.minimum(smax * dlon, 2.0 * math.pi))

    @cached_property
    def adjacency(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Pairs of bins sharing a boundary arc and the arc lengths."""
        ia, ib, ln = [], [], []
        z = self.z_edges
        colat = np.arccos(np.clip(z, -1, 1))
        for k, n in enumerate(self.band_counts):
            start = self.band_start[k]
            if n > 1:
                j = np.arange(n)
                ia.append(start + j)
                ib.append(start + (j + 1) % n)
                ln.append(np.full(n, colat[k] - colat[k + 1]))
            if k + 1 < self.n_bands:
                n2 = self.band_counts[k + 1]
                cuts = np.unique(np.concatenate([np.arange(n) / n, np.arange(n2) / n2, [1.0]]))
                mid = 0.5 * (cuts[1:] + cuts[:-1])
                ia.append(start + np.floor(mid * n).astype(np.int64))
                ib.append(self.band_start[k + 1] + np.floor(mid * n2).astype(np.int64))
                ln.append(np.diff(cuts) * 2.0 * math.pi * math.sin(colat[k + 1]))
        return np.concatenate(ia), np.concatenate(ib), np.concatenate(ln)

    def to_dict(self) -> dict:
        return {"n_bands": self.n_bands, "rotation": self.rotation.tolist()}


# ---------------------------------------------------------------------------
# triangulation of chart discs


def _node_normals(normal: NormalField) -> np.ndarray:
    return np.asarray(normal.values, dtype=float)


def disc_triangles(normal: NormalField, ring: int) -> tuple[np.ndarray, np.ndarray]:
    """Image triangles of ``B_{rho_ring}`` and the ring level at which each enters.

    Returns ``(verts, level)`` with ``verts`` of shape ``(T, 3, 3)``.
    """
    nu = _node_normals(normal)
    n_theta = nu.shape[1]
    if not 0 <= ring < nu.shape[0]:
        raise ValueError(f"ring index {ring} out of range")
    j = np.arange(n_theta)
    jn = (j + 1) % n_theta
    c = np.broadcast_to(normal.center, (n_theta, 3))
    fan = np.stack([c, nu[0, j], nu[0, jn]], axis=1)
    parts = [fan]
    levels = [np.zeros(n_theta, dtype=np.int64)]
    if ring > 0:
        lo = nu[:ring]
        hi = nu[1:ring + 1]
        t1 = np.stack([lo[:, j], hi[:, j], hi[:, jn]], axis=2).reshape(-1, 3, 3)
        t2 = np.stack([lo[:, j], hi[:, jn], lo[:, jn]], axis=2).reshape(-1, 3, 3)
        lev = np.repeat(np.arange(1, ring + 1), n_theta)
        parts += [t1, t2]
        levels += [lev, lev]
    return np.concatenate(parts), np.concatenate(levels)


def signed_image_area(normal: NormalField, ring: int) -> float:
    """Sum of signed spherical areas of the image triangles (van Oosterom-Strackee)."""
    v, _ = disc_triangles(normal, ring)
    a, b, c = v[:, 0], v[:, 1], v[:, 2]
    num = np.einsum("ij,ij->i", a, np.cross(b, c))
    den = 1.0 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) \
        + np.einsum("ij,ij->i", c, a)
    return float(np.sum(2.0 * np.arctan2(num, den)))


def boundary_curve(normal: NormalField, ring: int) -> np.ndarray:
    return _node_normals(normal)[ring]


def _distance_to_polyline(points: np.ndarray, curve: np.ndarray) -> np.ndarray:
    """Angular distance from each point to the closed great-circle polyline ``curve``."""
    u = curve
    v = np.roll(curve, -1, axis=0)
    n = np.cross(u, v)
    nn = np.linalg.norm(n, axis=1)
    out = np.full(points.shape[0], math.inf)
    for start in range(0, points.shape[0], 4096):
        p = points[start:start + 4096]
        dots = np.clip(p @ u.T, -1.0, 1.0)
        vert = np.arccos(dots).min(axis=1)
        ok = nn > 1e-15
        nh = n[ok] / nn[ok, None]
        s = p @ nh.T
        foot = p[:, None, :] - s[..., None] * nh[None]
        inside = (np.einsum("sk,psk->ps", np.cross(nh, u[ok]), foot) >= 0.0) & \
                 (np.einsum("psk,sk->ps", np.cross(foot, v[ok]), nh) >= 0.0)
        arc = np.where(inside, np.arcsin(np.clip(np.abs(s), 0.0, 1.0)), math.inf)
        out[start:start + 4096] = np.minimum(vert, arc.min(axis=1) if arc.size else math.inf)
    return out


# ---------------------------------------------------------------------------
# degree fields


@dataclass(frozen=True, eq=False)
class DegreeField:
    raster: SphereRaster
    values: np.ndarray
    radius: float
    ring: int
    coverage: np.ndarray
    residual: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(self.residual.max()) if self.residual.size else 0.0

    def to_csv(self) -> str:
        c = self.raster.centers
        lat = np.degrees(np.arcsin(np.clip(c[:, 2], -1, 1)))
        lon = np.degrees(np.arctan2(c[:, 1], c[:, 0]))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lat_deg", "lon_deg", "degree"])
        for a, b, d in zip(lat, lon, self.values):
            w.writerow([f"{a:.9f}", f"{b:.9f}", int(d)])
        return buf.getvalue()


def _accumulate(verts, slot, n_slots, points_native):
    order_z = points_native[:, 2]
    out = np.zeros((n_slots, points_native.shape[0]), dtype=np.int64)
    verts = np.ascontiguousarray(verts)
    slot = np.ascontiguousarray(slot, dtype=np.int64)
    pts = np.ascontiguousarray(points_native)
    if use_numba():
        sk.accumulate_compiled(verts, slot, pts, np.ascontiguousarray(order_z), out)
    else:
        sk.accumulate_numpy(verts, slot, pts, order_z, out)
    return np.cumsum(out, axis=0)


def degree_rasters(normal: NormalField, rings, raster: SphereRaster,
                   check: bool = True) -> list[DegreeField]:
    """Degree fields of ``nu`` on ``B_rho`` for several ring indices in one pass.

    Each bin's coverage is the mean signed covering count at its centre and
    the centroids of its four equal-area quarters (five samples, so no ties);
    the degree is its nearest integer and the
    rounding residual is kept.  A residual above 0.25 in a bin whose centre is
    farther than two bin radii from the boundary image raises
    :class:`ResolutionError`.
    """
    rings = [int(r) for r in rings]
    levels = np.unique(rings)
    verts, level = disc_triangles(normal, int(levels[-1]))
    native = verts @ raster.rotation  # row vectors: v_native = Q^T v
    slot = np.searchsorted(levels, level)
    counts = [_accumulate(native, slot, levels.size, pts) for pts in raster.subsamples]
    rho = normal.grid.rho
    out = []
    for r in rings:
        k = int(np.searchsorted(levels, r))
        cov = sum(c[k] for c in counts) / len(counts)
        deg = np.rint(cov).astype(np.int64)
        res = np.abs(cov - deg)
        if check and np.any(res > 0.25):
            bad = np.flatnonzero(res > 0.25)
            dist = _distance_to_polyline(raster.centers[bad], boundary_curve(normal, r))
            interior = dist > 2.0 * raster.bin_radius[bad]
            if interior.any():
                k = int(bad[np.argmax(interior)])
                raise ResolutionError(
                    f"bin {k} has coverage {cov[k]:.3f} away from the boundary image")
        out.append(DegreeField(raster, deg, float(rho[r]), r, cov, res))
    return out


def degree_raster(normal: NormalField, R: float, raster: SphereRaster,
                  check: bool = True) -> DegreeField:
    """Degree field of ``nu`` restricted to ``B_R`` (``R`` snapped to the nearest ring)."""
    return degree_rasters(normal, [normal.grid.ring_index(R)], raster, check)[0]


def degree_point(normal: NormalField, R: float, y, tol: float = 1e-8) -> int:
    """Signed preimage count of ``y`` under the triangulated normal map on ``B_R``.

    Each triangle's cone is tested by solving for barycentric coordinates.
    """
    y = np.asarray(y, dtype=float)
    y = y / np.linalg.norm(y)
    ring = normal.grid.ring_index(R)
    d = _distance_to_polyline(y[None], boundary_curve(normal, ring))[0]
    if d < tol:
        raise RegularValueError(f"y is {d:.3e} from the boundary image")
    verts, _ = disc_triangles(normal, ring)
    A = np.transpose(verts, (0, 2, 1))  # columns a, b, c
    det = np.linalg.det(A)
    ok = np.abs(det) > 1e-300
    w = np.linalg.solve(A[ok], np.broadcast_to(y, (int(ok.sum()), 3))[..., None])[..., 0]
    hit = np.all(w > 0.0, axis=1)
    return int(np.sum(np.sign(det[ok][hit])))


def total_degree_integral(deg: DegreeField) -> float:
    """``int_{S^2} deg dH^2``: area-weighted bin sum."""
    return float(np.sum(deg.values * deg.raster.weights))


def level_set_perimeter(deg: DegreeField) -> float:
    """``sum_s Per({deg > s})``: jump-weighted length of bin boundaries between unequal values."""
    ia, ib, ln = deg.raster.adjacency
    return float(np.sum(np.abs(deg.values[ia] - deg.values[ib]) * ln))


# ---------------------------------------------------------------------------
# boundary variation and the isoperimetric inequality


def boundary_variation(normal: NormalField, R: float) -> float:
    """``int_{dB_R} |d nu / ds| ds`` (tangential derivative, spectral in theta)."""
    ring = normal.grid.ring_index(R)
    nu = _node_normals(normal)
    dnu = d_theta(normal.grid, nu[ring:ring + 1])[0]
    return float(np.sum(np.linalg.norm(dnu, axis=-1)) * normal.grid.dtheta)


@dataclass(frozen=True)
class IsoperimetricRecord:
    radius: float
    boundary_variation: float
    total_degree: float
    di: float
    F_value: float
    residual: float
    slack: float
    passed: bool


def isoperimetric_records(normal: NormalField, radii, raster: SphereRaster,
                          slack: float = 1e-2, check: bool = True) -> list[IsoperimetricRecord]:
    grid = normal.grid
    rings = [grid.ring_index(R) for R in radii]
    fields = degree_rasters(normal, rings, raster, check=check)
    out = []
    for ring, deg in zip(rings, fields):
        R = float(grid.rho[ring])
        bv = boundary_variation(normal, R)
        tot = total_degree_integral(deg)
        di = dist_4pi(tot)
        Fv = F_iso(di)
        res = bv - Fv
        out.append(IsoperimetricRecord(R, bv, tot, di, Fv, res, slack, bool(res >= -slack)))
    return out


def isoperimetric_check(normal: NormalField, R: float, raster: SphereRaster,
                        slack: float = 1e-2) -> IsoperimetricRecord:
    """``boundary_variation - F(di(total degree))`` with pass flag ``residual >= -slack``."""
    return isoperimetric_records(normal, [R], raster, slack)[0]


# ---------------------------------------------------------------------------
# Jensen bound and dyadic assembly


def _log_integral(profile: CurvatureProfile, fun, a: float, b: float) -> float:
    """``int_a^b fun(kappa(rho)) d rho / rho`` by the trapezoid rule in ``log rho``."""
    r = profile.rho_values
    inner = r[(r > a) & (r < b)]
    x = np.concatenate([[a], inner, [b]])
    return float(trapezoid(fun(profile.at(x)), np.log(x)))


def jensen_lower_bound(profile: CurvatureProfile) -> float:
    """``(1/2 pi) int_{rho_min}^1 F~(kappa(B_rho))^2 d rho / rho``."""
    r = profile.rho_values
    return _log_integral(profile, lambda k: F_tilde(k) ** 2, float(r[0]), float(r[-1])) \
        / (2.0 * math.pi)


@dataclass(frozen=True)
class DyadicRecord:
    h: float
    C1: float
    h1: float
    J: int
    log_2J: float
    shell_errors: tuple[float, ...]
    error_sum: float
    series_bound: float
    estimate: float
    asymptotic: float

    def as_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def dyadic_assembly(profile: CurvatureProfile, params: ConeParams, C1: float) -> DyadicRecord:
    """Lower-bound bookkeeping over the shells ``[2^j h1, 2^(j+1) h1]``, ``j < J``.

    ``estimate = C* J log 2 - error_sum`` with ``error_sum`` the measured
    ``(1/2 pi) int |F~(kappa)^2 - F~(2 pi (1 - m0))^2| d rho / rho`` over the shells;
    ``series_bound = sum_j R_j^-1 h^(1/2) (2 R_j)^(1/2) |log h|^(3/4)``.
    """
    h, L = params.h, params.log_h
    h1 = 2.0 * C1 * h * L**1.5
    top = 1.0 - C1 * h * math.sqrt(L)
    if h1 <= 0.0 or top < 2.0 * h1:
        raise DyadicRangeError(f"no dyadic shell fits: h1 = {h1:.4g}, outer radius {top:.4g}")
    J = int(math.floor(math.log2(top / h1)))
    while h1 * 2.0 ** (J + 1) <= top:
        J += 1
    while h1 * 2.0**J > top:
        J -= 1
    target = F_tilde(2.0 * math.pi * (1.0 - params.m0)) ** 2
    rmin = float(profile.rho_values[0])
    shells = []
    for j in range(J):
        a, b = h1 * 2.0**j, h1 * 2.0 ** (j + 1)
        if a < rmin:
            raise DyadicRangeError("profile does not reach down to h1")
        shells.append(_log_integral(profile, lambda k: np.abs(F_tilde(k) ** 2 - target), a, b)
                      / (2.0 * math.pi))
    err = float(sum(shells))
    series = sum((h1 * 2.0**j) ** -1 * math.sqrt(h * 2.0 * h1 * 2.0**j) * L**0.75
                 for j in range(J + 1))
    log2J = J * math.log(2.0)
    c_star = params.c_star
    return DyadicRecord(h, C1, h1, J, log2J, tuple(shells), err, series,
                        c_star * log2J - err, c_star * (L - 1.5 * math.log(L)))
