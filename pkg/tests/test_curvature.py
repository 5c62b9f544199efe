import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from conesheet.curvature import (AdmissibleRangeError, FFunction, admissible_window,
                                 deviation_scale, domain_change_correction, f_function,
                                 immersion_profile, interpolation_check, kappa_deviation,
                                 omega_fields)
from conesheet.energy import bending
from conesheet.geodesics import ChartField, g_factor, polar_fields, shoot_fan
from conesheet.geometry import ConeParams, PolarGrid
from conesheet.surfaces import flat_disc, sphere_cap

P4 = ConeParams(0.5, 2.0**-4)
G4 = PolarGrid.for_thickness(P4.h, 256, 32)


@pytest.fixture(scope="module")
def flat_fan():
    return shoot_fan(ChartField.from_immersion(flat_disc(G4)), P4)


@pytest.fixture(scope="module")
def ansatz_f(ansatz_fan6, params6):
    om = omega_fields(ansatz_fan6)
    return om, f_function(ansatz_fan6, om, params6)


# ---------------------------------------------------------------- chart profile

def test_flat_profile_zero():
    assert np.all(immersion_profile(flat_disc(G4)).kappa_values == 0.0)


def test_sphere_profile_closed_form():
    grid = PolarGrid(512, 32, 1e-3)
    a = 2.0
    prof = immersion_profile(sphere_cap(grid, a))
    exact = 2 * math.pi * (1 - np.cos(a * grid.rho))
    assert np.max(np.abs(prof.kappa_values - exact)) < 1e-3
    assert np.all(np.diff(prof.kappa_values) > 0)


def test_sphere_profile_second_order():
    errs = []
    for n in (128, 256):
        grid = PolarGrid(n, 32, 1e-3)
        prof = immersion_profile(sphere_cap(grid, 2.0))
        errs.append(abs(prof.kappa_values[-1] - 2 * math.pi * (1 - math.cos(2.0))))
    assert math.log2(errs[0] / errs[1]) > 1.8


def test_ansatz_profile_concentrated(ansatz_fine, params6):
    prof = immersion_profile(ansatz_fine)
    far = prof.rho_values >= params6.h
    assert np.max(np.abs(prof.kappa_values[far] - math.pi)) <= 1e-4


def test_profile_interpolation_and_csv(ansatz_fine):
    prof = immersion_profile(ansatz_fine)
    r = prof.rho_values
    mid = 0.5 * (r[100] + r[101])
    assert prof.at(mid) == pytest.approx(0.5 * (prof.kappa_values[100] + prof.kappa_values[101]))
    lines = prof.to_csv().splitlines()
    assert lines[0] == "rho_length,kappa_dimensionless"
    assert len(lines) == r.size + 1


# ---------------------------------------------------------------- deviation integral

def test_flat_deviation(flat_fan):
    prof = immersion_profile(flat_disc(G4))
    assert kappa_deviation(prof, P4, 0.5, flat_fan.C1) == pytest.approx(math.pi * 0.5, rel=1e-12)


def test_deviation_window_enforced(flat_fan):
    prof = immersion_profile(flat_disc(G4))
    lo, hi = admissible_window(P4, flat_fan.C1)
    with pytest.raises(AdmissibleRangeError):
        kappa_deviation(prof, P4, 0.5 * lo, flat_fan.C1)
    with pytest.raises(AdmissibleRangeError):
        kappa_deviation(prof, P4, hi + 0.01, flat_fan.C1)


def test_ansatz_deviation_small(ansatz_fine, ansatz_fan6, params6):
    prof = immersion_profile(ansatz_fine)
    lo, hi = admissible_window(params6, ansatz_fan6.C1)
    for R in np.linspace(lo, hi, 7):
        assert kappa_deviation(prof, params6, R, ansatz_fan6.C1) <= 1e-4


def test_deviation_scale():
    assert deviation_scale(P4, 0.25) == pytest.approx(0.5 * 0.25 * math.log(16) ** 0.75)


# ---------------------------------------------------------------- along-ray fields

def test_flat_omega(flat_fan):
    for o in omega_fields(flat_fan):
        assert np.max(np.abs(o.omega)) < 1e-10
        assert np.max(np.abs(o.omega_bar)) < 1e-10
        assert np.max(np.abs(o.G_curv - 1)) < 1e-10


def test_ansatz_omega_total(ansatz_f):
    _, ff = ansatz_f
    # dphi-integrated Omega beyond the cap equals the cap curvature 2 pi (1 - m0)
    assert ff.kappa_geodesic[-1] == pytest.approx(math.pi, abs=1e-3)


def test_g_curv_matches_jacobi(ansatz_f, ansatz_fan6):
    om, _ = ansatz_f
    for o in om:
        assert np.max(np.abs(o.G_curv - o.G_jacobi)) < 1e-4
    # and the chart-interpolated metric route, at the grid nodes
    pf = polar_fields(ansatz_fan6)
    gm = g_factor(ansatz_fan6).metric
    o = om[0]
    far = pf.grid.rho >= 2 * ansatz_fan6.params.h
    g_curv_nodes = np.interp(pf.r[far, 0], o.r, o.G_curv)
    assert np.max(np.abs(g_curv_nodes - gm[far, 0])) < 1e-4


# ---------------------------------------------------------------- f function

def test_flat_f_function(flat_fan):
    # with G = 1 and r = rho: f = 2 pi r / m0 - 2 pi (r - r0), f' = 2 pi, f'' = 0 for m0 = 1/2
    ff = f_function(flat_fan, omega_fields(flat_fan), P4)
    assert np.max(np.abs(ff.f - 2 * math.pi * (ff.r + flat_fan.r0))) < 1e-9
    assert np.max(np.abs(ff.df - 2 * math.pi)) < 1e-9
    assert np.max(np.abs(ff.d2f)) < 1e-9


def test_ansatz_f_beyond_cap(ansatz_f, params6):
    _, ff = ansatz_f
    assert np.max(np.abs(ff.df)) < 2e-3
    assert np.max(np.abs(ff.d2f)) < 1e-6
    assert np.max(np.abs(ff.f - 4 * math.pi * params6.h)) < 2e-3


def test_f_second_derivative_bounded_by_bending(ansatz_f, ansatz_fine, params6):
    _, ff = ansatz_f
    l1 = trapezoid(np.abs(ff.d2f), ff.r)
    assert l1 <= bending(ansatz_fine, params6) / params6.h**2


def test_f_derivatives_match_numerical_derivatives(ansatz_fan6, ansatz_f, params6):
    om, _ = ansatz_f
    errs = []
    for n in (4001, 16001):
        r = np.linspace(om[0].r[0] * 1.01, 0.9, n)
        ff = f_function(ansatz_fan6, om, params6, r_grid=r, r0=ansatz_fan6.r0)
        errs.append(np.max(np.abs(np.gradient(ff.f, ff.r) - ff.df)))
    assert errs[1] < errs[0] / 8


def test_f_csv(ansatz_f):
    _, ff = ansatz_f
    head = ff.to_csv().splitlines()[0]
    assert head == "r_length,f_length,df_dimensionless,d2f_inverse_length"


def test_f_requires_r0(flat_fan):
    fan = shoot_fan(ChartField.from_immersion(flat_disc(G4)))
    with pytest.raises(ValueError):
        f_function(fan, omega_fields(fan), P4)


# ---------------------------------------------------------------- interpolation inequality

def test_interpolation_sine():
    x = np.linspace(0, 2 * math.pi, 20001)
    ff = FFunction(x, np.sin(x), np.cos(x), -np.sin(x), 0 * x)
    assert interpolation_check(ff) == pytest.approx(1.0, abs=1e-6)


def test_interpolation_zero_is_degenerate():
    x = np.linspace(0, 1, 11)
    assert interpolation_check(FFunction(x, 0 * x, 0 * x, 0 * x, 0 * x)) is None


def test_interpolation_ansatz_bounded(ansatz_f):
    _, ff = ansatz_f
    assert interpolation_check(ff) <= 4.0


def test_domain_change_correction_ansatz(ansatz_fine, ansatz_fan6, ansatz_f, params6):
    _, ff = ansatz_f
    prof = immersion_profile(ansatz_fine)
    corr = domain_change_correction(prof, ff, params6, 0.5, ansatz_fan6)
    assert 0 <= corr < 1e-3
