"""Wall-clock comparison of the numba kernels against the numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json PATH]

Each case runs once per backend to warm up (JIT compilation, caches), then
reports the best of ``--repeat`` timed runs and checks the two backends agree.
"""

from __future__ import annotations

import argparse
import json
import math
import time

import numpy as np

from conesheet._accel import HAVE_NUMBA, forced_backend
from conesheet.ansatz import sample_ansatz
from conesheet.geodesics import ChartField, polar_fields, shoot_fan
from conesheet.geometry import ConeParams, PolarGrid, surface_normal
from conesheet.sphere import SphereRaster, degree_rasters
from conesheet.surfaces import fourier_perturbation


def _geodesic_case(n_rho):
    p = ConeParams(0.5, 2.0**-6)
    chart = ChartField.from_immersion(sample_ansatz(PolarGrid.for_thickness(p.h, n_rho, 16), p))

    def run():
        return polar_fields(shoot_fan(chart, p)).r
    return f"geodesic fan {n_rho}x16", run


def _sphere_case(n_bands):
    p = ConeParams(0.5, 2.0**-5)
    imm = sample_ansatz(PolarGrid.for_thickness(p.h, 256, 64), p)
    nf = surface_normal(fourier_perturbation(imm, np.random.default_rng(0), 0.02))
    raster = SphereRaster.with_seed(n_bands, 0)
    rings = list(np.linspace(10, 255, 20).astype(int))

    def run():
        return np.stack([d.values for d in degree_rasters(nf, rings, raster)])
    return f"degree rasters 20 rings, {raster.n_bins} bins", run


def _time(fn, repeat):
    fn()
    best = math.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="write results to this file")
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not installed; only the numpy path can be timed")
    cases = [_geodesic_case(1024), _geodesic_case(4096), _sphere_case(100), _sphere_case(200)]
    results = []
    print(f"{'case':<40} {'numpy [s]':>10} {'numba [s]':>10} {'speedup':>8}  agree")
    for name, fn in cases:
        with forced_backend("numpy"):
            t_np, out_np = _time(fn, args.repeat)
        row = {"case": name, "numpy_s": t_np, "numba_s": None, "speedup": None, "agree": None}
        if HAVE_NUMBA:
            with forced_backend("numba"):
                t_nb, out_nb = _time(fn, args.repeat)
            agree = bool(np.allclose(out_np, out_nb, rtol=0, atol=1e-8))
            row.update(numba_s=t_nb, speedup=t_np / t_nb, agree=agree)
            print(f"{name:<40} {t_np:>10.3f} {t_nb:>10.3f} {t_np / t_nb:>8.1f}  {agree}")
        else:
            print(f"{name:<40} {t_np:>10.3f} {'-':>10} {'-':>8}  -")
        results.append(row)
    if args.json:
        with open(args.json, "w") as f:
            json.dump(results, f, indent=2)
    return 0 if all(r["agree"] is not False for r in results) else 1


if __name__ == "__main__":
    raise SystemExit(main())
