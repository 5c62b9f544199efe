"""Discrete immersions of the unit disc on a log-polar grid.

An :class:`Immersion` stores one position per node of a :class:`PolarGrid`
plus the image of the origin.  Derivatives are second-order finite
differences: non-uniform three-point stencils in ``rho`` (one-sided at the
inner and outer ring) and spectral periodic differentiation in ``theta``.  All
frame quantities are expressed in the orthonormal frame ``(d rho, rho d theta)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

FORMAT_TAG = "conesheet-immersion"
FORMAT_VERSION = 1


class DegenerateNodeError(ValueError):
    """The discrete Jacobian lost rank at a grid node."""

    def __init__(self, index: tuple[int, int], what: str):
        self.index = tuple(int(i) for i in index)
        super().__init__(f"degenerate {what} at node (i_rho, i_theta) = {self.index}")


class GridResolutionError(ValueError):
    """The grid does not resolve the transition radius ``rho = h``."""


@dataclass(frozen=True)
class ConeParams:
    """Cone factor ``m0`` and sheet thickness ``h``."""

    m0: float
    h: float

    def __post_init__(self):
        if not (0.0 < self.m0 < 1.0):
            raise ValueError(f"m0 must lie in (0, 1), got {self.m0}")
        if not (0.0 < self.h < math.exp(-1.0)):
            raise ValueError(f"h must lie in (0, 1/e), got {self.h}")

    @property
    def c_star(self) -> float:
        return 2.0 * math.pi * (1.0 - self.m0**2)

    @property
    def log_h(self) -> float:
        """``|log h|``."""
        return -math.log(self.h)


@dataclass(frozen=True)
class PolarGrid:
    """Log-spaced radii on ``[rho_min, rho_max]`` times uniform angles."""

    n_rho: int
    n_theta: int
    rho_min: float
    rho_max: float = 1.0

    def __post_init__(self):
        if self.n_rho < 3:
            raise ValueError("n_rho must be at least 3")
        if self.n_theta < 16:
            raise ValueError("n_theta must be at least 16")
        if not (0.0 < self.rho_min < self.rho_max):
            raise ValueError("need 0 < rho_min < rho_max")

    @classmethod
    def for_thickness(cls, h: float, n_rho: int, n_theta: int,
                      rho_min_factor: float = 0.125, rho_max: float = 1.0) -> "PolarGrid":
        return cls(n_rho, n_theta, rho_min_factor * h, rho_max)

    @cached_property
    def rho(self) -> np.ndarray:
        r = np.geomspace(self.rho_min, self.rho_max, self.n_rho)
        r[0], r[-1] = self.rho_min, self.rho_max
        r.setflags(write=False)
        return r

    @cached_property
    def theta(self) -> np.ndarray:
        t = self.dtheta * np.arange(self.n_theta)
        t.setflags(write=False)
        return t

    @property
    def dtheta(self) -> float:
        return 2.0 * math.pi / self.n_theta

    @property
    def ds(self) -> float:
        """Spacing in ``s = log rho``."""
        return math.log(self.rho_max / self.rho_min) / (self.n_rho - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rho, self.n_theta)

    def samples_in(self, lo: float, hi: float) -> int:
        return int(np.count_nonzero((self.rho >= lo) & (self.rho <= hi)))

    def check_resolves(self, h: float) -> None:
        if self.rho_min > h / 4.0 * (1.0 + 1e-12):
            raise GridResolutionError(f"rho_min = {self.rho_min} exceeds h/4 = {h / 4}")
        if self.samples_in(h, 2.0 * h) < 4:
            raise GridResolutionError(
                f"only {self.samples_in(h, 2 * h)} radial samples in [h, 2h]; need 4")

    def ring_index(self, radius: float) -> int:
        """Index of the ring closest to ``radius`` in log scale."""
        if not (self.rho_min * (1 - 1e-12) <= radius <= self.rho_max * (1 + 1e-12)):
            raise ValueError(f"radius {radius} outside [{self.rho_min}, {self.rho_max}]")
        return int(np.argmin(np.abs(np.log(self.rho / radius))))

    @cached_property
    def radial_operator(self) -> sp.csr_matrix:
        """Sparse ``d/d rho`` on one column of ring values (exact for quadratics)."""
        return _radial_difference_matrix(self.rho)

    @cached_property
    def radial_trapezoid(self) -> np.ndarray:
        """Weights ``w_i`` with ``sum_i w_i f_i ~ int f(rho) rho d rho`` per unit angle."""
        w = np.full(self.n_rho, self.ds)
        w[0] = w[-1] = 0.5 * self.ds
        return w * self.rho**2

    @property
    def cap_area(self) -> float:
        return math.pi * self.rho_min**2

    def to_dict(self) -> dict:
        return {"n_rho": self.n_rho, "n_theta": self.n_theta,
                "rho_min": self.rho_min, "rho_max": self.rho_max}

    @classmethod
    def from_dict(cls, d: dict) -> "PolarGrid":
        return cls(int(d["n_rho"]), int(d["n_theta"]), float(d["rho_min"]),
                   float(d.get("rho_max", 1.0)))


def _three_point_weights(nodes: np.ndarray, x0: float) -> np.ndarray:
    """Derivative at ``x0`` of the quadratic interpolant through three nodes."""
    x1, x2, x3 = nodes
    return np.array([
        (2 * x0 - x2 - x3) / ((x1 - x2) * (x1 - x3)),
        (2 * x0 - x1 - x3) / ((x2 - x1) * (x2 - x3)),
        (2 * x0 - x1 - x2) / ((x3 - x1) * (x3 - x2)),
    ])


def _radial_difference_matrix(rho: np.ndarray) -> sp.csr_matrix:
    n = rho.size
    rows, cols, vals = [], [], []
    for i in range(n):
        lo = min(max(i - 1, 0), n - 3)
        idx = np.arange(lo, lo + 3)
        w = _three_point_weights(rho[idx], rho[i])
        rows += [i] * 3
        cols += idx.tolist()
        vals += w.tolist()
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def d_rho(grid: PolarGrid, f: np.ndarray) -> np.ndarray:
    """Radial derivative of a field whose first axis is the ring index."""
    flat = f.reshape(grid.n_rho, -1)
    return (grid.radial_operator @ flat).reshape(f.shape)


def d_rho_adjoint(grid: PolarGrid, g: np.ndarray) -> np.ndarray:
    flat = g.reshape(grid.n_rho, -1)
    return (grid.radial_operator.T @ flat).reshape(g.shape)


def d_theta(grid: PolarGrid, f: np.ndarray) -> np.ndarray:
    """Spectral periodic angular derivative along axis 1.

    Exact for trigonometric polynomials below the Nyquist frequency; the
    Nyquist mode is dropped so the operator stays antisymmetric.
    """
    n = grid.n_theta
    k = np.fft.rfftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k[-1] = 0.0
    shape = (1, k.size) + (1,) * (f.ndim - 2)
    fh = np.fft.rfft(f, axis=1)
    return np.fft.irfft(1j * k.reshape(shape) * fh, n=n, axis=1)


def d_theta_adjoint(grid: PolarGrid, g: np.ndarray) -> np.ndarray:
    return -d_theta(grid, g)


def _rho_column(grid: PolarGrid, ndim: int) -> np.ndarray:
    return grid.rho.reshape((-1,) + (1,) * (ndim - 1))


@dataclass(frozen=True)
class MetricComponents:
    """Symmetric form ``p1 drho^2 + 2 p2 rho drho dtheta + p3 rho^2 dtheta^2``."""

    p1: np.ndarray | float
    p2: np.ndarray | float
    p3: np.ndarray | float

    def __sub__(self, other: "MetricComponents") -> "MetricComponents":
        return MetricComponents(np.subtract(self.p1, other.p1), np.subtract(self.p2, other.p2),
                                np.subtract(self.p3, other.p3))

    @property
    def det(self):
        return np.multiply(self.p1, self.p3) - np.square(self.p2)

    def as_tuple(self) -> tuple:
        return (self.p1, self.p2, self.p3)


def metric_norm_sq(p: MetricComponents):
    """``p1^2 + 2 p2^2 + p3^2``: squared Frobenius norm in the orthonormal frame."""
    return np.square(p.p1) + 2.0 * np.square(p.p2) + np.square(p.p3)


def reference_metric(params: ConeParams) -> MetricComponents:
    """Singular-cone metric ``d rho^2 + m0^2 rho^2 d theta^2``."""
    return MetricComponents(1.0, 0.0, params.m0**2)


@dataclass(frozen=True)
class NormalField:
    """Unit normals at the grid nodes plus the normal assigned to the origin."""

    grid: PolarGrid
    values: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape + (3,):
            raise ValueError(f"normal array has shape {self.values.shape}")
        norms = np.linalg.norm(self.values, axis=-1)
        if np.max(np.abs(norms - 1.0)) > 1e-12:
            raise ValueError("normal field entries are not unit vectors")


@dataclass(frozen=True, eq=False)
class Immersion:
    """Node positions ``(n_rho, n_theta, 3)`` and the image of the origin."""

    grid: PolarGrid
    positions: np.ndarray
    center_position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=float)
        if pos.shape != self.grid.shape + (3,):
            raise ValueError(f"positions have shape {pos.shape}, expected {self.grid.shape + (3,)}")
        c = np.asarray(self.center_position, dtype=float).reshape(3)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "center_position", c)

    def with_positions(self, positions: np.ndarray, center=None) -> "Immersion":
        return Immersion(self.grid, positions,
                         self.center_position if center is None else center)

    def rigid_motion(self, rotation: np.ndarray, translation=(0.0, 0.0, 0.0)) -> "Immersion":
        R = np.asarray(rotation, dtype=float)
        t = np.asarray(translation, dtype=float)
        return Immersion(self.grid, self.positions @ R.T + t, R @ self.center_position + t)

    @cached_property
    def fields(self) -> "SurfaceFields":
        return surface_fields(self)

    # serialization -----------------------------------------------------
    def to_json_dict(self) -> dict:
        return {
            "format": FORMAT_TAG,
            "version": FORMAT_VERSION,
            "grid": self.grid.to_dict(),
            "layout": "row-major (rho index, theta index, xyz)",
            "center_position": self.center_position.tolist(),
            "positions": self.positions.reshape(-1).tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Immersion":
        if d.get("format") != FORMAT_TAG:
            raise ValueError(f"not an immersion file (format={d.get('format')!r})")
        grid = PolarGrid.from_dict(d["grid"])
        pos = np.asarray(d["positions"], dtype=float).reshape(grid.shape + (3,))
        return cls(grid, pos, np.asarray(d["center_position"], dtype=float))

    def save(self, path: str | Path) -> None:
        path = Path(path)
        if path.suffix == ".npz":
            np.savez(path, positions=self.positions, center_position=self.center_position,
                     grid=np.array([self.grid.n_rho, self.grid.n_theta, self.grid.rho_min,
                                    self.grid.rho_max]))
            return
        path.write_text(json.dumps(self.to_json_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "Immersion":
        path = Path(path)
        if path.suffix == ".npz":
            with np.load(path) as z:
                g = z["grid"]
                grid = PolarGrid(int(g[0]), int(g[1]), float(g[2]), float(g[3]))
                return cls(grid, z["positions"], z["center_position"])
        return cls.from_json_dict(json.loads(path.read_text()))


@dataclass(frozen=True, eq=False)
class SurfaceFields:
    """Node-wise first- and second-order geometry of an immersion."""

    grid: PolarGrid
    a: np.ndarray          # d_rho y
    b: np.ndarray          # rho^-1 d_theta y
    normal: np.ndarray     # unit normal
    nu_a: np.ndarray       # d_rho nu
    nu_b: np.ndarray       # rho^-1 d_theta nu
    metric: MetricComponents
    gauss: np.ndarray
    area_density: np.ndarray

    @property
    def dnu_frobenius_sq(self) -> np.ndarray:
        return np.sum(self.nu_a**2, axis=-1) + np.sum(self.nu_b**2, axis=-1)


def _first_zero(mask: np.ndarray) -> tuple[int, int]:
    return tuple(int(i) for i in np.argwhere(mask)[0])


def frame_derivatives(grid: PolarGrid, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rho = _rho_column(grid, y.ndim)
    return d_rho(grid, y), d_theta(grid, y) / rho


def surface_fields(imm: Immersion) -> SurfaceFields:
    grid = imm.grid
    a, b = frame_derivatives(grid, imm.positions)
    p1 = np.sum(a * a, axis=-1)
    p2 = np.sum(a * b, axis=-1)
    p3 = np.sum(b * b, axis=-1)
    metric = MetricComponents(p1, p2, p3)
    det = metric.det
    bad = ~(det > 1e-28 * np.maximum(p1 * p3, 1e-300))
    if bad.any():
        raise DegenerateNodeError(_first_zero(bad), "Jacobian")
    n = np.cross(a, b)
    nn = np.linalg.norm(n, axis=-1)
    normal = n / nn[..., None]
    nu_a, nu_b = frame_derivatives(grid, normal)
    num = (np.sum(nu_a * a, -1) * np.sum(nu_b * b, -1)
           - np.sum(nu_a * b, -1) * np.sum(nu_b * a, -1))
    gauss = num / det
    return SurfaceFields(grid, a, b, normal, nu_a, nu_b, metric, gauss, np.sqrt(det))


def pullback_metric(imm: Immersion) -> MetricComponents:
    return imm.fields.metric


def center_normal(normals: np.ndarray) -> np.ndarray:
    """Normal assigned to the origin: normalised mean of the innermost ring."""
    m = normals[0].mean(axis=0)
    nm = np.linalg.norm(m)
    if nm < 1e-12:
        raise DegenerateNodeError((0, 0), "origin normal (innermost ring averages to zero)")
    return m / nm


def surface_normal(imm: Immersion) -> NormalField:
    nu = imm.fields.normal
    return NormalField(imm.grid, nu, center_normal(nu))


def normal_jacobian(imm: Immersion) -> np.ndarray:
    """Cartesian gradient ``D nu`` per node, shape ``(n_rho, n_theta, 3, 2)``."""
    f = imm.fields
    c = np.cos(imm.grid.theta)[None, :, None]
    s = np.sin(imm.grid.theta)[None, :, None]
    d1 = c * f.nu_a - s * f.nu_b
    d2 = s * f.nu_a + c * f.nu_b
    return np.stack([d1, d2], axis=-1)


def gauss_curvature(imm: Immersion) -> tuple[np.ndarray, np.ndarray]:
    """Gauss curvature ``det(Dnu^T Dy)/det(Dy^T Dy)`` and area density per node."""
    f = imm.fields
    return f.gauss, f.area_density


def cell_metric(imm: Immersion) -> MetricComponents:
    """Metric per grid cell from its four edges, shape ``(n_rho - 1, n_theta)``.

    The radial edge vectors and the angular chords are both exact for maps that
    are linear in ``rho`` along each ray, so an exact cone yields
    ``p1 = 1, p2 = 0`` exactly and ``p3 = m0^2 sinc^2(dtheta/2)``.
    """
    return cell_metric_from_positions(imm.grid, imm.positions)


def cell_edges(grid: PolarGrid, y: np.ndarray):
    rho = grid.rho
    drho = np.diff(rho)[:, None, None]
    y_next = np.roll(y, -1, axis=1)
    aL = (y[1:] - y[:-1]) / drho
    aR = (y_next[1:] - y_next[:-1]) / drho
    bB = (y_next[:-1] - y[:-1]) / (rho[:-1, None, None] * grid.dtheta)
    bT = (y_next[1:] - y[1:]) / (rho[1:, None, None] * grid.dtheta)
    return aL, aR, bB, bT


def cell_metric_from_positions(grid: PolarGrid, y: np.ndarray) -> MetricComponents:
    aL, aR, bB, bT = cell_edges(grid, y)
    p1 = 0.5 * (np.sum(aL * aL, -1) + np.sum(aR * aR, -1))
    p3 = 0.5 * (np.sum(bB * bB, -1) + np.sum(bT * bT, -1))
    p2 = np.sum(0.5 * (aL + aR) * 0.5 * (bB + bT), -1)
    return MetricComponents(p1, p2, p3)


def cell_areas(grid: PolarGrid) -> np.ndarray:
    """Reference areas ``(rho_{i+1}^2 - rho_i^2) dtheta / 2`` of the cells, per ring."""
    return 0.5 * np.diff(grid.rho**2) * grid.dtheta
