"""Closed-form test immersions: flat disc, exact cone, sphere caps, perturbations."""

from __future__ import annotations

import math

import numpy as np

from .geometry import Immersion, PolarGrid


def _polar_nodes(grid: PolarGrid):
    rho = grid.rho[:, None]
    th = grid.theta[None, :]
    return rho, th


def flat_disc(grid: PolarGrid, scale: float = 1.0) -> Immersion:
    """``y(x) = scale * (x, 0)``."""
    rho, th = _polar_nodes(grid)
    pos = np.stack(np.broadcast_arrays(scale * rho * np.cos(th), scale * rho * np.sin(th),
                                       0.0 * rho * th), axis=-1)
    return Immersion(grid, pos, np.zeros(3))


def exact_cone(grid: PolarGrid, m0: float) -> Immersion:
    """``y = rho * e_m0(theta)``: isometric to the reference cone everywhere but the tip."""
    rho, th = _polar_nodes(grid)
    k = math.sqrt(1.0 - m0 * m0)
    pos = np.stack(np.broadcast_arrays(m0 * rho * np.cos(th), m0 * rho * np.sin(th),
                                       k * rho + 0.0 * th), axis=-1)
    return Immersion(grid, pos, np.zeros(3))


def sphere_cap(grid: PolarGrid, cap_angle: float, wrap: int = 1,
               sphere_radius: float = 1.0) -> Immersion:
    """Sphere patch with polar angle ``cap_angle * rho / rho_max`` and azimuth ``wrap * theta``.

    ``cap_angle = pi/2`` covers the upper hemisphere once, ``wrap = 2`` wraps it
    twice.  The outward normal of the sphere agrees with the chart orientation.
    """
    rho, th = _polar_nodes(grid)
    polar = cap_angle * rho / grid.rho_max
    az = wrap * th
    pos = sphere_radius * np.stack(np.broadcast_arrays(
        np.sin(polar) * np.cos(az), np.sin(polar) * np.sin(az), np.cos(polar)), axis=-1)
    return Immersion(grid, pos, np.array([0.0, 0.0, sphere_radius]))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def fourier_perturbation(imm: Immersion, rng: np.random.Generator, amplitude: float,
                         n_modes: int = 4, max_wavenumber: float = 6.0) -> Immersion:
    """Add ``amplitude * sum_k c_k sin(k . x + phase_k)`` in reference Cartesian coordinates.

    Each mode has a random wave vector of length at most ``max_wavenumber``, a
    random phase and a random 3-vector amplitude normalised so the mode sum has
    sup-norm at most ``amplitude``.
    """
    grid = imm.grid
    rho, th = _polar_nodes(grid)
    x1 = rho * np.cos(th)
    x2 = rho * np.sin(th)
    disp = np.zeros(grid.shape + (3,))
    disp0 = np.zeros(3)
    for _ in range(n_modes):
        k = rng.uniform(-max_wavenumber, max_wavenumber, size=2)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        c = rng.standard_normal(3)
        c *= amplitude / (n_modes * np.linalg.norm(c))
        wave = np.sin(k[0] * x1 + k[1] * x2 + phase)
        disp += wave[..., None] * c
        disp0 += math.sin(phase) * c
    return Immersion(grid, imm.positions + disp, imm.center_position + disp0)
