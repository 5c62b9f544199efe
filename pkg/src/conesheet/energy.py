"""Membrane and bending energies on discrete immersions.

The membrane term compares the per-cell pullback metric with the cone metric
``g0 = d rho^2 + m0^2 rho^2 d theta^2`` on cells lying in ``rho >= h``.  The
bending term is ``h^2 int |D nu|^2 dx`` with trapezoid weights in ``log rho``
(exact for the ``rho^-2`` density of a cone) plus a polar-cap weight for
``B_{rho_min}``.  Value-and-gradient helpers used by the optimizer live here
as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (ConeParams, DegenerateNodeError, Immersion, PolarGrid, cell_areas,
                       cell_edges, cell_metric_from_positions, d_rho, d_rho_adjoint, d_theta,
                       d_theta_adjoint, metric_norm_sq, reference_metric)

FUNCTIONALS = ("sup", "l2")
CSV_HEADER = ("m0", "h", "functional", "membrane", "bending", "total")


@dataclass(frozen=True)
class EnergyBreakdown:
    membrane: float
    bending: float
    functional: str = "sup"

    def __post_init__(self):
        if self.functional not in FUNCTIONALS:
            raise ValueError(f"functional must be one of {FUNCTIONALS}")
        if self.membrane < 0 or self.bending < 0:
            raise ValueError("energy parts must be nonnegative")

    @property
    def total(self) -> float:
        return self.membrane + self.bending

    def csv_row(self, params: ConeParams) -> list:
        return [params.m0, params.h, self.functional, self.membrane, self.bending, self.total]


# ---------------------------------------------------------------------------
# membrane


def membrane_cell_mask(grid: PolarGrid, h: float) -> np.ndarray:
    """Cell rows whose inner radius is at least ``h``."""
    return grid.rho[:-1] >= h * (1.0 - 1e-12)


def membrane_error_field(grid: PolarGrid, positions: np.ndarray, params: ConeParams):
    """``|g - g0|^2`` per cell, shape ``(n_rho - 1, n_theta)``."""
    p = cell_metric_from_positions(grid, positions)
    return metric_norm_sq(p - reference_metric(params))


def membrane_sup(imm: Immersion, params: ConeParams) -> float:
    """Exact maximum of ``|g - g0|^2`` over cells in ``rho >= h``."""
    imm.grid.check_resolves(params.h)
    e = membrane_error_field(imm.grid, imm.positions, params)
    return float(np.max(e[membrane_cell_mask(imm.grid, params.h)]))


def _pnorm(e: np.ndarray, w: np.ndarray, p: int) -> tuple[float, np.ndarray]:
    """Weighted ``(mean e^p)^(1/p)`` and its derivative with respect to ``e``."""
    wsum = w.sum()
    emax = float(e.max())
    if emax <= 0.0:
        return 0.0, np.zeros_like(e)
    ratio = e / emax
    mean = float(np.sum(w * ratio**p)) / wsum
    val = emax * mean ** (1.0 / p)
    grad = (e / val) ** (p - 1) * w / wsum
    return val, grad


def membrane_pnorm(imm: Immersion, params: ConeParams, p: int) -> float:
    """Smooth surrogate ``(area-mean of |g - g0|^(2p))^(1/p)`` over ``rho >= h``."""
    val, _ = membrane_pnorm_and_grad(imm.grid, imm.positions, params, p, need_grad=False)
    return val


def membrane_pnorm_and_grad(grid: PolarGrid, y: np.ndarray, params: ConeParams, p: int,
                            need_grad: bool = True):
    if p < 2:
        raise ValueError("p must be at least 2")
    grid.check_resolves(params.h)
    mask = membrane_cell_mask(grid, params.h)
    aL, aR, bB, bT = cell_edges(grid, y)
    p1 = 0.5 * (np.sum(aL * aL, -1) + np.sum(aR * aR, -1))
    p3 = 0.5 * (np.sum(bB * bB, -1) + np.sum(bT * bT, -1))
    am = 0.5 * (aL + aR)
    bm = 0.5 * (bB + bT)
    p2 = np.sum(am * bm, -1)
    m2 = params.m0**2
    e = (p1 - 1.0) ** 2 + 2.0 * p2**2 + (p3 - m2) ** 2
    w = np.broadcast_to(cell_areas(grid)[:, None], e.shape)
    val, de = _pnorm(e[mask], w[mask], p)
    if not need_grad:
        return val, None
    dE = np.zeros_like(e)
    dE[mask] = de
    g1 = (dE * 2.0 * (p1 - 1.0))[..., None]
    g2 = (dE * 4.0 * p2)[..., None]
    g3 = (dE * 2.0 * (p3 - m2))[..., None]
    gaL = g1 * aL + g2 * 0.5 * bm
    gaR = g1 * aR + g2 * 0.5 * bm
    gbB = g3 * bB + g2 * 0.5 * am
    gbT = g3 * bT + g2 * 0.5 * am
    return val, _scatter_edges(grid, gaL, gaR, gbB, gbT)


def _scatter_edges(grid: PolarGrid, gaL, gaR, gbB, gbT) -> np.ndarray:
    """Adjoint of :func:`cell_edges`."""
    rho = grid.rho
    drho = np.diff(rho)[:, None, None]
    gaL = gaL / drho
    gaR = gaR / drho
    gbB = gbB / (rho[:-1, None, None] * grid.dtheta)
    gbT = gbT / (rho[1:, None, None] * grid.dtheta)
    g = np.zeros(grid.shape + (3,))
    gn = np.zeros_like(g)  # contributions to the node at j + 1
    g[1:] += gaL
    g[:-1] -= gaL
    gn[1:] += gaR
    gn[:-1] -= gaR
    gn[:-1] += gbB
    g[:-1] -= gbB
    gn[1:] += gbT
    g[1:] -= gbT
    return g + np.roll(gn, 1, axis=1)


# ---------------------------------------------------------------------------
# bending


def bending_weights(grid: PolarGrid) -> np.ndarray:
    """Node quadrature weights for ``int f dx`` including the polar cap."""
    w = np.repeat(grid.radial_trapezoid[:, None] * grid.dtheta, grid.n_theta, axis=1)
    w[0] += grid.cap_area / grid.n_theta
    return w


def dnu_integral_and_grad(grid: PolarGrid, y: np.ndarray, need_grad: bool = True):
    """``int |D nu|^2 dx`` (quadrature) and its gradient with respect to node positions."""
    rho = grid.rho[:, None, None]
    a = d_rho(grid, y)
    b = d_theta(grid, y) / rho
    n = np.cross(a, b)
    nn = np.linalg.norm(n, axis=-1, keepdims=True)
    if np.any(nn <= 0.0):
        raise DegenerateNodeError(tuple(np.argwhere(nn[..., 0] <= 0.0)[0]), "normal")
    nu = n / nn
    nu_a = d_rho(grid, nu)
    nu_b = d_theta(grid, nu) / rho
    w = bending_weights(grid)
    dens = np.sum(nu_a**2, -1) + np.sum(nu_b**2, -1)
    val = float(np.sum(w * dens))
    if not need_grad:
        return val, None
    wc = w[..., None]
    g_nu = d_rho_adjoint(grid, 2.0 * wc * nu_a) + d_theta_adjoint(grid, 2.0 * wc * nu_b / rho)
    g_n = (g_nu - nu * np.sum(nu * g_nu, -1, keepdims=True)) / nn
    ga = np.cross(b, g_n)
    gb = np.cross(g_n, a)
    gy = d_rho_adjoint(grid, ga) + d_theta_adjoint(grid, gb / rho)
    return val, gy


def bending(imm: Immersion, params: ConeParams) -> float:
    """``h^2 int |D nu|^2 dx``."""
    dens = imm.fields.dnu_frobenius_sq
    return params.h**2 * float(np.sum(bending_weights(imm.grid) * dens))


def bending_annulus(imm: Immersion, params: ConeParams, r_inner: float) -> float:
    """Bending energy restricted to nodes with ``rho >= r_inner`` (trapezoid from that ring)."""
    grid = imm.grid
    i0 = int(np.searchsorted(grid.rho, r_inner * (1 - 1e-12)))
    dens = imm.fields.dnu_frobenius_sq[i0:]
    w = np.full(grid.n_rho - i0, grid.ds)
    w[0] = w[-1] = 0.5 * grid.ds
    w = w * grid.rho[i0:] ** 2 * grid.dtheta
    return params.h**2 * float(np.sum(w[:, None] * dens))


def total_energy(imm: Immersion, params: ConeParams, functional: str = "sup") -> EnergyBreakdown:
    if functional == "sup":
        return EnergyBreakdown(membrane_sup(imm, params), bending(imm, params), "sup")
    if functional == "l2":
        grid = imm.grid
        e = membrane_error_field(grid, imm.positions, params)
        w = cell_areas(grid)[:, None]
        mem_sq = float(np.sum(w * e)) + grid.cap_area * float(np.mean(e[0]))
        dnu_sq = float(np.sum(bending_weights(grid) * imm.fields.dnu_frobenius_sq))
        return EnergyBreakdown(math.sqrt(mem_sq), params.h**2 * math.sqrt(dnu_sq), "l2")
    raise ValueError(f"unknown functional {functional!r}")
