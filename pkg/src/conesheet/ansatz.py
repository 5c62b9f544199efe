"""Explicit upper-bound construction: a flat disc smoothly bent into a cone.

``y(rho, theta) = psi(rho/h) rho e_m0 + (1 - psi(rho/h)) rho e_rho`` with
``e_m0 = m0 e_rho + sqrt(1 - m0^2) e_z`` and a quintic smoothstep ``psi``.
For ``rho >= h`` the map is the exact cone ``rho e_m0``; for ``rho <= h/2`` it is
the identity of the plane.

Notation used throughout: ``t = rho/h``, ``u = psi + t psi'`` (so that
``d_rho y = u e_m0 + (1 - u) e_rho``), ``k = sqrt(1 - m0^2)`` and
``F^2 = |d_rho y|^2 = 1 - 2 (1 - m0) u (1 - u)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .energy import EnergyBreakdown
from .geometry import ConeParams, Immersion, MetricComponents, PolarGrid


@dataclass(frozen=True)
class CutoffSpec:
    """Transition interval and derivative bounds of the cutoff."""

    t_start: float = 0.5
    t_end: float = 1.0
    degree: int = 5
    sup_dpsi: float = 3.75
    sup_d2psi: float = 40.0 * math.sqrt(3.0) / 3.0

    def __post_init__(self):
        if not self.sup_dpsi <= 4.0:
            raise ValueError("cutoff slope exceeds 4")


CUTOFF = CutoffSpec()


def cutoff(t):
    """Quintic smoothstep on ``[1/2, 1]``: returns ``(psi, psi', psi'')``."""
    t = np.asarray(t, dtype=float)
    s = np.clip(2.0 * t - 1.0, 0.0, 1.0)
    inside = (t > 0.5) & (t < 1.0)
    psi = s**3 * (10.0 - 15.0 * s + 6.0 * s * s)
    dpsi = np.where(inside, 60.0 * s * s * (s - 1.0) ** 2, 0.0)
    d2psi = np.where(inside, 240.0 * s * (2.0 * s * s - 3.0 * s + 1.0), 0.0)
    if psi.ndim == 0:
        return float(psi), float(dpsi), float(d2psi)
    return psi, dpsi, d2psi


def _profile(rho, params: ConeParams):
    """``psi, u, u'`` as functions of ``rho``."""
    h = params.h
    t = np.asarray(rho, dtype=float) / h
    psi, dpsi, d2psi = cutoff(t)
    u = psi + t * dpsi
    du = (2.0 * dpsi + t * d2psi) / h
    return psi, u, du


def _frame(theta):
    th = np.asarray(theta, dtype=float)
    c, s = np.cos(th), np.sin(th)
    z = np.zeros_like(c)
    e_rho = np.stack([c, s, z], axis=-1)
    e_theta = np.stack([-s, c, z], axis=-1)
    e_z = np.stack([z, z, z + 1.0], axis=-1)
    return e_rho, e_theta, e_z


def ansatz_map(rho, theta, params: ConeParams) -> np.ndarray:
    rho, theta = np.broadcast_arrays(np.asarray(rho, float), np.asarray(theta, float))
    psi, _, _ = _profile(rho, params)
    k = math.sqrt(1.0 - params.m0**2)
    radial = rho * (1.0 - (1.0 - params.m0) * psi)
    return np.stack([radial * np.cos(theta), radial * np.sin(theta), rho * k * psi], axis=-1)


def stretch_sq(rho, params: ConeParams):
    """``F^2 = |d_rho y|^2``; also the squared length of the unnormalised normal."""
    _, u, _ = _profile(rho, params)
    return 1.0 - 2.0 * (1.0 - params.m0) * u * (1.0 - u)


def ansatz_metric(rho, params: ConeParams) -> MetricComponents:
    """Pullback metric ``(F^2, 0, (1 - (1 - m0) psi)^2)`` in the ``(d rho, rho d theta)`` frame."""
    psi, _, _ = _profile(rho, params)
    p1 = stretch_sq(rho, params)
    return MetricComponents(p1, np.zeros_like(p1), (1.0 - (1.0 - params.m0) * psi) ** 2)


def ansatz_normal(rho, theta, params: ConeParams) -> np.ndarray:
    rho, theta = np.broadcast_arrays(np.asarray(rho, float), np.asarray(theta, float))
    m0 = params.m0
    k = math.sqrt(1.0 - m0 * m0)
    _, u, _ = _profile(rho, params)
    e_rho, _, e_z = _frame(theta)
    e_perp = -k * e_rho + m0 * e_z
    n = u[..., None] * e_perp + (1.0 - u)[..., None] * e_z
    return n / np.sqrt(stretch_sq(rho, params))[..., None]


def ansatz_normal_jacobian(rho, theta, params: ConeParams) -> np.ndarray:
    """Cartesian ``D nu`` with shape ``(..., 3, 2)``.

    Radial column ``d_rho nu = u' [(e_perp - e_z)/F - (1 - m0)(2u - 1) N / F^3]``,
    angular column ``rho^-1 d_theta nu = -u k / (rho F) e_theta``.
    """
    rho, theta = np.broadcast_arrays(np.asarray(rho, float), np.asarray(theta, float))
    m0 = params.m0
    k = math.sqrt(1.0 - m0 * m0)
    _, u, du = _profile(rho, params)
    f2 = stretch_sq(rho, params)
    if np.any(f2 <= 0.0):
        raise ArithmeticError("normal normalisation vanished")
    f = np.sqrt(f2)
    e_rho, e_theta, e_z = _frame(theta)
    e_perp = -k * e_rho + m0 * e_z
    n = u[..., None] * e_perp + (1.0 - u)[..., None] * e_z
    nu_a = du[..., None] * ((e_perp - e_z) / f[..., None]
                            - ((1.0 - m0) * (2.0 * u - 1.0) / f**3)[..., None] * n)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(rho > 0, -u * k / (rho * f), 0.0)
    nu_b = coef[..., None] * e_theta
    c, s = np.cos(theta)[..., None], np.sin(theta)[..., None]
    d1 = c * nu_a - s * nu_b
    d2 = s * nu_a + c * nu_b
    return np.stack([d1, d2], axis=-1)


def ansatz_bending_density(rho, params: ConeParams):
    """``|D nu|^2`` of the ansatz (independent of ``theta``)."""
    m0 = params.m0
    k2 = 1.0 - m0 * m0
    rho = np.asarray(rho, dtype=float)
    _, u, du = _profile(rho, params)
    f2 = stretch_sq(rho, params)
    # |e_perp - e_z|^2 = 2(1 - m0); (e_perp - e_z).N = -(1 - m0)(2u - 1);
    # so |d_rho nu|^2 = u'^2 (1 - m0) (2 - (1 - m0)(2u - 1)^2 / F^2) / F^2
    radial = du**2 * (1.0 - m0) * (2.0 - (1.0 - m0) * (2.0 * u - 1.0) ** 2 / f2) / f2
    with np.errstate(divide="ignore", invalid="ignore"):
        angular = np.where(rho > 0, k2 * u * u / (rho * rho * f2), 0.0)
    return radial + angular


def _quad(fun, a, b, tol):
    val, _ = integrate.quad(fun, a, b, epsabs=tol, epsrel=1e-13, limit=400)
    return val


def ansatz_bending_parts(params: ConeParams, tol: float = 1e-12) -> dict:
    """``int |D nu|^2 dx`` over the cap ``B_h`` and over the annulus ``B_1 \\ B_h``.

    The radial integrand is integrated in ``s = log rho`` with breakpoints at
    ``h/2`` and ``h``; inside ``B_{h/2}`` the map is flat and contributes zero.
    """
    h = params.h
    def integrand(s):
        r = math.exp(s)
        return float(ansatz_bending_density(r, params)) * r * r
    two_pi = 2.0 * math.pi
    cap = two_pi * _quad(integrand, math.log(h / 2.0), math.log(h), tol)
    annulus = two_pi * _quad(integrand, math.log(h), 0.0, tol)
    return {"cap": cap, "annulus": annulus}


def ansatz_energy(params: ConeParams, tol: float = 1e-12,
                  functional: str = "sup") -> EnergyBreakdown:
    """Closed-form energy: zero membrane term plus ``h^2`` times the radial bending quadrature.

    For the ``"l2"`` functional the membrane term is the ``L^2`` norm of the
    metric error over all of ``B_1`` (nonzero only inside the cap) and the
    bending term is ``h^2`` times the unsquared ``L^2`` norm of ``D nu``.
    """
    parts = ansatz_bending_parts(params, tol)
    dnu_sq = parts["cap"] + parts["annulus"]
    h2 = params.h**2
    if functional == "sup":
        return EnergyBreakdown(0.0, h2 * dnu_sq, "sup")
    if functional == "l2":
        m0 = params.m0
        def err(s):
            r = math.exp(s)
            p = ansatz_metric(r, params)
            e = (float(p.p1) - 1.0) ** 2 + (float(p.p3) - m0 * m0) ** 2
            return e * r * r
        mem_sq = 2.0 * math.pi * _quad(err, math.log(params.h / 2.0), math.log(params.h), tol)
        # flat part of B_{h/2}: |g - g0|^2 = (1 - m0^2)^2 on area pi h^2 / 4
        mem_sq += math.pi * (params.h / 2.0) ** 2 * (1.0 - m0 * m0) ** 2
        return EnergyBreakdown(math.sqrt(mem_sq), h2 * math.sqrt(dnu_sq), "l2")
    raise ValueError(f"unknown functional {functional!r}")


def sample_ansatz(grid: PolarGrid, params: ConeParams) -> Immersion:
    rho = grid.rho[:, None]
    th = grid.theta[None, :]
    return Immersion(grid, ansatz_map(rho, th, params), np.zeros(3))
