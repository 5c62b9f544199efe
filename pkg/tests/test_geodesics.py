import json
import math

import numpy as np
import pytest
from scipy.integrate import quad

from conesheet._accel import HAVE_NUMBA, forced_backend
from conesheet.ansatz import sample_ansatz, stretch_sq
from conesheet.geodesics import (Assumption1Violation, ChartField, NonPositiveMetricError,
                                 assumption1_report, assumption1_summary, christoffel_field,
                                 detestim_diagnostics, dist_so2, g_factor, gamma_field,
                                 linf_diagnostic, polar_fields, shoot_fan, shoot_geodesic)
from conesheet.geometry import ConeParams, PolarGrid
from conesheet.surfaces import exact_cone, flat_disc, sphere_cap

P4 = ConeParams(0.5, 2.0**-4)
G4 = PolarGrid.for_thickness(P4.h, 64, 32)


@pytest.fixture(scope="module")
def flat_fan():
    return shoot_fan(ChartField.from_immersion(flat_disc(G4)), P4)


# ---------------------------------------------------------------- christoffel symbols

def test_christoffel_euclidean_polar():
    grid = PolarGrid(64, 32, 1e-2)
    cs = christoffel_field(ChartField.from_immersion(flat_disc(grid)))
    rho = grid.rho[:, None]
    assert np.max(np.abs(cs["r_tt"] + rho)) < 1e-8
    assert np.max(np.abs(cs["t_rt"] - 1 / rho)) < 1e-8
    for k in ("r_rr", "r_rt", "t_rr", "t_tt"):
        assert np.max(np.abs(cs[k])) < 1e-8


def test_christoffel_cone():
    grid = PolarGrid(64, 32, 1e-2)
    cs = christoffel_field(ChartField.from_immersion(exact_cone(grid, 0.5)))
    rho = grid.rho[:, None]
    assert np.max(np.abs(cs["r_tt"] + 0.25 * rho)) < 1e-8
    assert np.max(np.abs(cs["t_rt"] - 1 / rho)) < 1e-8


def _straight_line_error(n_theta):
    # constant Cartesian metric dx^2 + 4 dy^2 in the polar frame; geodesics are straight lines
    grid = PolarGrid(64, n_theta, 1e-1)
    th = grid.theta[None, :]
    c, s = np.cos(th), np.sin(th)
    chart = ChartField.from_arrays(grid, c * c + 4 * s * s, 3 * s * c, s * s + 4 * c * c, 0.0)
    ray = shoot_geodesic(chart, 0.7)
    x = ray.rho * np.cos(ray.theta)
    y = ray.rho * np.sin(ray.theta)
    return float(np.max(np.abs(y - math.tan(0.7) * x)))


def test_constant_cartesian_metric_straight_geodesics():
    coarse, fine = _straight_line_error(64), _straight_line_error(1024)
    assert fine < 1e-4
    assert coarse / fine > 100


def test_non_positive_metric_rejected():
    grid = PolarGrid(16, 16, 1e-2)
    with pytest.raises(NonPositiveMetricError):
        ChartField.from_arrays(grid, 1.0, 1.0, 1.0, 0.0)


# ---------------------------------------------------------------- flat disc

def test_flat_ray_is_radial_line(flat_fan):
    for ray in flat_fan.rays:
        assert ray.termination == "exit"
        assert np.max(np.abs(ray.r - ray.rho)) < 1e-12
        assert np.max(np.abs(ray.theta - ray.phi0)) < 1e-12
        assert np.max(np.abs(ray.J - ray.r)) < 1e-10
        assert np.all(np.diff(ray.r) > 0)


def test_flat_module_is_identity(flat_fan):
    pf = polar_fields(flat_fan)
    gm = gamma_field(pf)
    gf = g_factor(flat_fan, gm)
    assert np.max(np.abs(pf.r - G4.rho[:, None])) < 1e-6
    assert np.max(np.abs(pf.phi - G4.theta)) < 1e-6
    assert np.max(np.abs(gm.gamma - np.eye(2))) < 1e-6
    assert np.max(np.abs(gf.metric - 1)) < 1e-6
    assert np.max(np.abs(gf.jacobi - 1)) < 1e-6
    assert gm.identity_residual < 1e-6
    assert assumption1_report(flat_fan, gm)["passed"]


def test_flat_detestim(flat_fan):
    rec = detestim_diagnostics(flat_fan, gamma_field(polar_fields(flat_fan)), P4)
    assert rec.sup_det_deviation == pytest.approx(1.0, abs=1e-6)
    assert rec.radial_integral < 1e-6
    assert json.loads(json.dumps(rec.as_dict())) == rec.as_dict()


def test_fan_constants_flat(flat_fan):
    assert flat_fan.r0 == pytest.approx(2 * P4.h, abs=1e-12)
    # |r - r0 - rho| = 2h exactly on the flat disc
    assert flat_fan.C1 == pytest.approx(2 / math.sqrt(P4.log_h), rel=1e-9)
    expect = 1 - 2 * P4.h + flat_fan.r0 - flat_fan.C1 * P4.h * math.sqrt(P4.log_h)
    assert flat_fan.r_star == pytest.approx(expect, abs=1e-15)
    s = flat_fan.summary()
    assert s["n_rays"] == G4.n_theta and s["terminations"] == {"exit": G4.n_theta}


def test_rays_csv(flat_fan):
    text = flat_fan.rays_csv(stride=10)
    head = text.splitlines()[0].split(",")
    assert head[:3] == ["phi0_rad", "r_length", "rho_length"]


def test_ray_count_at_least_n_theta():
    with pytest.raises(ValueError):
        shoot_fan(ChartField.from_immersion(flat_disc(G4)), n_rays=8)


# ---------------------------------------------------------------- cone and ansatz

def test_cone_isometry_diagnostics_vanish():
    fan = shoot_fan(ChartField.from_immersion(exact_cone(G4, 0.5)), P4)
    rec = detestim_diagnostics(fan, gamma_field(polar_fields(fan)), P4)
    assert rec.sup_det_deviation < 1e-6
    assert rec.sup_dist_so2 < 1e-6
    assert rec.radial_integral < 1e-6


def test_ansatz_arclength_oracle(ansatz_fan6, params6):
    pf = polar_fields(ansatz_fan6)
    grid = pf.grid

    def F(x):
        return math.sqrt(float(stretch_sq(x, params6)))
    h = params6.h
    rows = np.arange(0, grid.n_rho, 257)
    oracle = np.array([quad(F, 0, grid.rho[i], points=[h / 2, h], epsabs=1e-14, limit=200)[0]
                       for i in rows])
    assert np.max(np.abs(pf.r[rows] - oracle[:, None])) < 1e-6


def test_ansatz_r_minus_rho_constant(ansatz_fan6, params6):
    pf = polar_fields(ansatz_fan6)
    far = pf.grid.rho >= params6.h
    d = pf.r[far] - pf.grid.rho[far, None]
    assert np.ptp(d) < 1e-6


def test_ansatz_g_factor(ansatz_fan6, params6):
    pf = polar_fields(ansatz_fan6)
    gf = g_factor(ansatz_fan6)
    far = pf.grid.rho >= params6.h
    target = params6.m0 * pf.grid.rho[:, None] / pf.r
    assert np.max(np.abs(gf.metric - target)[far]) < 1e-6
    assert np.max(np.abs(gf.jacobi - target)[far]) < 1e-4
    assert gf.max_disagreement < 1e-4
    assert abs(target[-1, 0] - params6.m0) < 0.05


def test_ansatz_rotational_consistency(ansatz_fan6):
    pf = polar_fields(ansatz_fan6)
    assert np.max(np.abs(pf.phi - pf.grid.theta[None, :])) < 1e-8


def test_ansatz_unit_speed_and_monotone(ansatz_fan6):
    assert ansatz_fan6.max_speed_deviation() < 1e-6
    for ray in ansatz_fan6.rays:
        assert np.all(np.diff(ray.r) > 0)
        assert ray.J[0] > 0


def test_ansatz_assumption1_passes(ansatz_fan6):
    gm = gamma_field(polar_fields(ansatz_fan6))
    assert np.all(gm.det > 0)
    assert assumption1_report(ansatz_fan6, gm)["passed"]


def test_linf_closed_form(ansatz_fan6, params6):
    # r - rho is constant beyond the cap, so the deviation is the cap excess at rho = 2h
    rec = linf_diagnostic(polar_fields(ansatz_fan6), ansatz_fan6.r0, params6)
    assert rec["sup_dev"] == pytest.approx(2 * params6.h, abs=1e-6)
    assert rec["C1"] == pytest.approx(2 / math.sqrt(params6.log_h), rel=1e-4)


# ---------------------------------------------------------------- conjugate points

def test_conjugate_point_from_jacobi_equation():
    # flat chart with prescribed K = 1: J = sin r vanishes at r = pi
    grid = PolarGrid(400, 16, 1e-3, 4.0)
    chart = ChartField.from_arrays(grid, 1.0, 0.0, 1.0, 1.0)
    ray = shoot_geodesic(chart, 0.3)
    assert ray.termination == "conjugate"
    assert ray.r[-1] == pytest.approx(math.pi, abs=1e-6)
    rep = assumption1_report(shoot_fan(chart))
    assert not rep["passed"]
    assert len(rep["conjugate_points"]) == grid.n_theta


def test_r_max_stop():
    grid = PolarGrid(400, 16, 1e-3, 4.0)
    chart = ChartField.from_arrays(grid, 1.0, 0.0, 1.0, 1.0)
    ray = shoot_geodesic(chart, 0.0, r_max=2.0)
    assert ray.termination == "r_max"
    assert ray.r[-1] == pytest.approx(2.0, abs=1e-12)


def test_sphere_jacobi_field():
    grid = PolarGrid(256, 16, 1e-3)
    imm = sphere_cap(grid, 2.0)
    ray = shoot_geodesic(ChartField.from_immersion(imm), 0.0)
    r = ray.r
    assert ray.termination == "exit"
    assert np.max(np.abs(ray.J - np.sin(r))) < 1e-4


def test_polar_fields_reports_early_termination():
    grid = PolarGrid(400, 16, 1e-3, 4.0)
    fan = shoot_fan(ChartField.from_arrays(grid, 1.0, 0.0, 1.0, 1.0))
    with pytest.raises(Assumption1Violation) as err:
        polar_fields(fan)
    assert err.value.locations


def test_assumption1_summary_flat():
    assert assumption1_summary(flat_disc(G4), P4)["passed"]


def test_dist_so2():
    th = 0.3
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    assert dist_so2(rot) == pytest.approx(0.0, abs=1e-7)
    assert dist_so2(2 * np.eye(2)) == pytest.approx(math.sqrt(2), abs=1e-12)
    assert dist_so2(np.diag([1.0, -1.0])) == pytest.approx(2.0, abs=1e-12)


# ---------------------------------------------------------------- backends

@pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
def test_backends_agree():
    params = ConeParams(0.5, 2.0**-4)
    grid = PolarGrid.for_thickness(params.h, 128, 16)
    chart = ChartField.from_immersion(sample_ansatz(grid, params))
    with forced_backend("numba"):
        a = shoot_fan(chart, params)
    with forced_backend("numpy"):
        b = shoot_fan(chart, params)
    assert [r.termination for r in a.rays] == [r.termination for r in b.rays]
    pa, pb = polar_fields(a), polar_fields(b)
    assert np.max(np.abs(pa.r - pb.r)) < 1e-8
    assert np.max(np.abs(pa.J - pb.J)) < 1e-8
    assert a.r0 == pytest.approx(b.r0, abs=1e-9)
