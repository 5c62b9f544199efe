"""Quasi-Newton relaxation of the discrete sheet energy with p-continuation.

Inside the optimizer the sup-norm membrane term is replaced by the smooth
``p``-mean surrogate; the true sup-norm energy is evaluated at every iterate
and the best iterate by that measure is returned.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .energy import (EnergyBreakdown, dnu_integral_and_grad, membrane_pnorm_and_grad,
                     total_energy)
from .geometry import ConeParams, DegenerateNodeError, Immersion, PolarGrid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    p_schedule: tuple[int, ...] = (2, 8, 32)
    max_iterations: int = 200
    gradient_tolerance: float = 1e-9
    sufficient_decrease: float = 1e-4
    backtracking: float = 0.5
    max_backtracks: int = 40
    history: int = 12

    def __post_init__(self):
        ps = tuple(int(p) for p in self.p_schedule)
        object.__setattr__(self, "p_schedule", ps)
        if not ps or any(p < 2 or p % 2 for p in ps):
            raise ValueError("p_schedule entries must be even integers >= 2")
        if any(b <= a for a, b in zip(ps, ps[1:])):
            raise ValueError("p_schedule must be strictly increasing")
        if self.max_iterations < 1 or self.history < 1 or self.max_backtracks < 1:
            raise ValueError("iteration counts must be positive")
        if not (self.gradient_tolerance > 0 and 0 < self.sufficient_decrease < 1
                and 0 < self.backtracking < 1):
            raise ValueError("tolerances and line-search factors out of range")


TRACE_HEADER = ("stage", "p_dimensionless", "iteration", "surrogate_dimensionless",
                "membrane_dimensionless", "bending_dimensionless", "total_dimensionless",
                "grad_norm_dimensionless", "step_dimensionless")


@dataclass
class OptimizationTrace:
    rows: list[tuple] = field(default_factory=list)
    line_search_failed: bool = False

    def record(self, stage, p, it, surrogate, e: EnergyBreakdown, gnorm, step):
        self.rows.append((stage, p, it, surrogate, e.membrane, e.bending, e.total, gnorm, step))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in self.rows:
            w.writerow([r[0], r[1], r[2]] + [f"{v:.12e}" for v in r[3:]])
        return buf.getvalue()


def _unflatten(grid: PolarGrid, x: np.ndarray) -> np.ndarray:
    return x.reshape(grid.shape + (3,))


def discrete_energy(positions, params: ConeParams, p: int, grid: PolarGrid) -> float:
    """Surrogate energy ``membrane_pnorm(p) + h^2 int |D nu|^2``."""
    y = _unflatten(grid, np.asarray(positions, dtype=float))
    mem, _ = membrane_pnorm_and_grad(grid, y, params, p, need_grad=False)
    dnu, _ = dnu_integral_and_grad(grid, y, need_grad=False)
    return mem + params.h**2 * dnu


def energy_and_gradient(positions, params: ConeParams, p: int, grid: PolarGrid):
    y = _unflatten(grid, np.asarray(positions, dtype=float))
    mem, gm = membrane_pnorm_and_grad(grid, y, params, p)
    dnu, gb = dnu_integral_and_grad(grid, y)
    h2 = params.h**2
    return mem + h2 * dnu, (gm + h2 * gb).reshape(-1)


def energy_gradient(positions, params: ConeParams, p: int, grid: PolarGrid) -> np.ndarray:
    """Analytic gradient of :func:`discrete_energy` as a flat vector."""
    return energy_and_gradient(positions, params, p, grid)[1]


@dataclass
class MinimizeResult:
    immersion: Immersion
    trace: OptimizationTrace
    energy: EnergyBreakdown
    initial_energy: EnergyBreakdown
    assumption1: dict | None = None

    def summary(self) -> dict:
        return {
            "initial": asdict(self.initial_energy) | {"total": self.initial_energy.total},
            "final": asdict(self.energy) | {"total": self.energy.total},
            "line_search_failed": self.trace.line_search_failed,
            "iterations": len(self.trace.rows),
            "assumption1": self.assumption1,
        }


def _lbfgs_direction(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in reversed(list(zip(s_hist, y_hist))):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        alphas.append((rho, a))
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def minimize(initial: Immersion, params: ConeParams,
             config: OptimizerConfig | None = None, diagnose: bool = False) -> MinimizeResult:
    """L-BFGS with Armijo backtracking per stage of the ``p`` schedule."""
    config = config or OptimizerConfig()
    grid = initial.grid
    grid.check_resolves(params.h)
    trace = OptimizationTrace()
    x = initial.positions.reshape(-1).copy()

    def true_energy(xv):
        return total_energy(initial.with_positions(_unflatten(grid, xv)), params)

    e0 = true_energy(x)
    best_x, best_e = x.copy(), e0
    for stage, p in enumerate(config.p_schedule):
        f, g = energy_and_gradient(x, params, p, grid)
        gscale = max(np.linalg.norm(g), 1e-300)
        s_hist, y_hist = [], []
        trace.record(stage, p, 0, f, true_energy(x), float(np.linalg.norm(g)), 0.0)
        for it in range(1, config.max_iterations + 1):
            d = _lbfgs_direction(g, s_hist, y_hist)
            slope = float(g @ d)
            if slope >= 0.0:
                s_hist.clear(), y_hist.clear()
                d = -g
                slope = -float(g @ g)
            if not s_hist:
                d *= min(1.0, 1e-3 * np.linalg.norm(x) / max(np.linalg.norm(d), 1e-300))
                slope = float(g @ d)
            step = 1.0
            accepted = False
            for _ in range(config.max_backtracks):
                xn = x + step * d
                try:
                    fn, gn = energy_and_gradient(xn, params, p, grid)
                except DegenerateNodeError:
                    fn = math.inf
                if np.isfinite(fn) and fn <= f + config.sufficient_decrease * step * slope:
                    accepted = True
                    break
                step *= config.backtracking
            if not accepted:
                trace.line_search_failed = True
                log.warning("line search failed at stage %d iteration %d", stage, it)
                break
            sk, yk = xn - x, gn - g
            if float(sk @ yk) > 1e-12 * float(np.linalg.norm(sk) * np.linalg.norm(yk)):
                s_hist.append(sk)
                y_hist.append(yk)
                if len(s_hist) > config.history:
                    s_hist.pop(0), y_hist.pop(0)
            x, f, g = xn, fn, gn
            et = true_energy(x)
            gnorm = float(np.linalg.norm(g))
            trace.record(stage, p, it, f, et, gnorm, step)
            if et.total < best_e.total:
                best_x, best_e = x.copy(), et
            if gnorm <= config.gradient_tolerance * gscale:
                break
    final = initial.with_positions(_unflatten(grid, best_x))
    report = None
    if diagnose:
        from .geodesics import assumption1_summary
        report = assumption1_summary(final, params)
    return MinimizeResult(final, trace, best_e, e0, report)
