import math

import numpy as np
import pytest

from conesheet.ansatz import sample_ansatz
from conesheet.energy import (bending, cell_areas, membrane_cell_mask, membrane_error_field,
                              membrane_pnorm, total_energy)
from conesheet.geometry import ConeParams, PolarGrid
from conesheet.minimize import (TRACE_HEADER, OptimizerConfig, discrete_energy, energy_gradient,
                                minimize)
from conesheet.surfaces import flat_disc, fourier_perturbation, random_rotation

P = ConeParams(0.5, 2.0**-4)
GRID = PolarGrid.for_thickness(P.h, 24, 32)


@pytest.fixture(scope="module")
def relaxed():
    return minimize(sample_ansatz(GRID, P), P, OptimizerConfig(max_iterations=40))


@pytest.mark.parametrize("kwargs", [dict(p_schedule=(8, 2)), dict(p_schedule=(3,)),
                                    dict(p_schedule=()), dict(max_iterations=0),
                                    dict(backtracking=1.0), dict(gradient_tolerance=0.0)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        OptimizerConfig(**kwargs)


def test_discrete_energy_ansatz():
    grid = PolarGrid.for_thickness(P.h, 64, 256)
    imm = sample_ansatz(grid, P)
    for p in (2, 32):
        val = discrete_energy(imm.positions.reshape(-1), P, p, grid)
        assert val - bending(imm, P) <= 1e-8
        assert val == pytest.approx(bending(imm, P), abs=1e-8)


def test_discrete_energy_flat():
    imm = flat_disc(GRID)
    sup = total_energy(imm, P).membrane
    for p in (2, 8, 32):
        val = discrete_energy(imm.positions.reshape(-1), P, p, GRID)
        assert val == pytest.approx(sup, rel=1e-12)


def test_discrete_energy_rigid_invariance(rng):
    imm = fourier_perturbation(sample_ansatz(GRID, P), rng, 0.01)
    moved = imm.rigid_motion(random_rotation(rng), rng.standard_normal(3))
    a = discrete_energy(imm.positions.reshape(-1), P, 8, GRID)
    b = discrete_energy(moved.positions.reshape(-1), P, 8, GRID)
    assert b == pytest.approx(a, rel=1e-11)


def test_gradient_directional_derivative(rng):
    imm = fourier_perturbation(sample_ansatz(GRID, P), rng, 0.01)
    x = imm.positions.reshape(-1)
    d = rng.standard_normal(x.size) * np.repeat(GRID.rho, GRID.n_theta * 3)
    for p in (2, 32):
        g = energy_gradient(x, P, p, GRID)
        def central(e):
            f = discrete_energy
            return (f(x + e * d, P, p, GRID) - f(x - e * d, P, p, GRID)) / (2 * e)
        fd = (4 * central(1e-6) - central(2e-6)) / 3
        assert fd == pytest.approx(g @ d, rel=1e-7)


def test_gradient_null_directions(rng):
    imm = fourier_perturbation(sample_ansatz(GRID, P), rng, 0.01)
    x = imm.positions.reshape(-1)
    G = energy_gradient(x, P, 8, GRID).reshape(-1, 3)
    pos = x.reshape(-1, 3)
    assert np.max(np.abs(G.sum(axis=0))) < 1e-10
    assert np.max(np.abs(np.cross(pos, G).sum(axis=0))) < 1e-10


def test_minimize_descends(relaxed):
    assert relaxed.energy.total <= relaxed.initial_energy.total
    assert relaxed.immersion.grid == GRID
    totals = [r[6] for r in relaxed.trace.rows]
    assert relaxed.energy.total == pytest.approx(min(totals), rel=1e-12)


def test_surrogate_monotone_within_stage(relaxed):
    rows = relaxed.trace.rows
    for stage in {r[0] for r in rows}:
        s = [r[3] for r in rows if r[0] == stage]
        assert all(b <= a for a, b in zip(s, s[1:]))


def test_trace_csv(relaxed):
    text = relaxed.trace.to_csv()
    lines = text.splitlines()
    assert lines[0] == ",".join(TRACE_HEADER)
    assert len(lines) == len(relaxed.trace.rows) + 1
    s = relaxed.summary()
    assert s["final"]["total"] == relaxed.energy.total
    assert s["iterations"] == len(relaxed.trace.rows)


def test_surrogate_area_bound(relaxed):
    # sup <= surrogate * w_max^(-1/p), where w_max is the area fraction of the argmax cell
    imm = relaxed.immersion
    e = membrane_error_field(GRID, imm.positions, P)
    mask = membrane_cell_mask(GRID, P.h)
    w = np.broadcast_to(cell_areas(GRID)[:, None], e.shape)[mask].ravel()
    E = e[mask].ravel()
    frac = w[np.argmax(E)] / w.sum()
    assert E.max() <= membrane_pnorm(imm, P, 32) * frac ** (-1 / 32) * (1 + 1e-12)


@pytest.mark.xfail(strict=True, reason="membrane error concentrates on the innermost "
                   "membrane ring, whose area fraction is below 1.2^-32")
def test_surrogate_tightness(relaxed):
    assert relaxed.energy.membrane <= 1.2 * membrane_pnorm(relaxed.immersion, P, 32)


def test_basin_from_perturbed_start(relaxed, rng):
    ansatz = total_energy(sample_ansatz(GRID, P), P).total
    start = fourier_perturbation(sample_ansatz(GRID, P), rng, 0.01)
    res = minimize(start, P, OptimizerConfig(max_iterations=40))
    assert res.energy.total <= 1.05 * ansatz


def test_diagnose_attaches_report():
    res = minimize(sample_ansatz(GRID, P), P, OptimizerConfig(max_iterations=3), diagnose=True)
    assert isinstance(res.assumption1, dict)
    assert "passed" in res.assumption1


def test_line_search_failure_returns_best():
    cfg = OptimizerConfig(max_iterations=5, max_backtracks=1, backtracking=1e-9,
                          sufficient_decrease=0.999)
    res = minimize(sample_ansatz(GRID, P), P, cfg)
    assert res.trace.line_search_failed
    assert res.energy.total <= res.initial_energy.total
    assert math.isfinite(res.energy.total)
