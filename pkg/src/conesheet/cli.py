"""Command-line pipelines: each subcommand reads a JSON config and writes CSV/JSON artifacts.

    conesheet <subcommand> CONFIG.json [--out DIR] [--seed N] [--jobs N]

Every CSV header labels its units: energies and curvatures are
dimensionless, radii and arclengths are in reference units (``length``).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .ansatz import ansatz_energy, sample_ansatz
from .curvature import (admissible_window, f_function, immersion_profile, interpolation_check,
                        kappa_deviation, omega_fields)
from .energy import FUNCTIONALS, total_energy
from .geodesics import (ChartField, assumption1_report, detestim_diagnostics, gamma_field,
                        linf_diagnostic, polar_fields, shoot_fan)
from .geometry import ConeParams, Immersion, PolarGrid, surface_normal
from .minimize import OptimizerConfig, minimize
from .sphere import (SphereRaster, boundary_variation, degree_raster, isoperimetric_records,
                     level_set_perimeter, total_degree_integral)
from .surfaces import exact_cone, flat_disc, fourier_perturbation, sphere_cap

log = logging.getLogger("conesheet")

FLOAT = "{:.12e}"


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending key."""


# ---------------------------------------------------------------------------
# config validation

_REQUIRED = object()


def _check(cfg: dict, schema: dict, where: str = "") -> dict:
    """Validate ``cfg`` against ``{key: (types, default)}``; unknown keys are errors."""
    if not isinstance(cfg, dict):
        raise ConfigError(f"{where or 'config'}: expected a JSON object")
    out = {}
    for key in cfg:
        if key not in schema:
            raise ConfigError(f"unknown key '{where}{key}'")
    for key, (types, default) in schema.items():
        name = where + key
        if key not in cfg:
            if default is _REQUIRED:
                raise ConfigError(f"missing required key '{name}'")
            out[key] = default
            continue
        val = cfg[key]
        if isinstance(types, dict):
            out[key] = _check(val, types, name + ".")
            continue
        if isinstance(val, bool) and bool not in types:
            raise ConfigError(f"key '{name}' has type bool")
        if not isinstance(val, types):
            names = "/".join(t.__name__ for t in types)
            raise ConfigError(f"key '{name}' must be {names}, got {type(val).__name__}")
        out[key] = val
    return out


NUM = (int, float)
GRID_SCHEMA = {"n_rho": ((int,), 256), "n_theta": ((int,), 64),
               "rho_min_factor": (NUM, 0.125)}
SURFACE_SCHEMA = {
    "m0": (NUM, _REQUIRED),
    "h": (NUM, _REQUIRED),
    "grid": (GRID_SCHEMA, {}),
    "surface": ((str,), "ansatz"),
    "immersion_path": ((str, type(None)), None),
    "cap_angle": (NUM, math.pi / 2),
    "wrap": ((int,), 1),
    "perturbation": (NUM, 0.0),
}
SURFACES = ("ansatz", "flat", "cone", "sphere_cap")


def _params(cfg: dict) -> ConeParams:
    try:
        return ConeParams(float(cfg["m0"]), float(cfg["h"]))
    except ValueError as exc:
        raise ConfigError(f"key 'm0'/'h': {exc}") from None


def _grid(cfg: dict, params: ConeParams) -> PolarGrid:
    g = cfg["grid"]
    g = _check(g, GRID_SCHEMA, "grid.") if g else _check({}, GRID_SCHEMA, "grid.")
    try:
        return PolarGrid.for_thickness(params.h, g["n_rho"], g["n_theta"], g["rho_min_factor"])
    except ValueError as exc:
        raise ConfigError(f"key 'grid': {exc}") from None


def _surface(cfg: dict, params: ConeParams, rng: np.random.Generator) -> Immersion:
    if cfg["immersion_path"]:
        imm = Immersion.load(cfg["immersion_path"])
    else:
        grid = _grid(cfg, params)
        kind = cfg["surface"]
        if kind == "ansatz":
            imm = sample_ansatz(grid, params)
        elif kind == "flat":
            imm = flat_disc(grid)
        elif kind == "cone":
            imm = exact_cone(grid, params.m0)
        elif kind == "sphere_cap":
            imm = sphere_cap(grid, float(cfg["cap_angle"]), int(cfg["wrap"]))
        else:
            raise ConfigError(f"key 'surface' must be one of {SURFACES}, got {kind!r}")
    if cfg["perturbation"]:
        imm = fourier_perturbation(imm, rng, float(cfg["perturbation"]))
    return imm


# ---------------------------------------------------------------------------
# output helpers


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT.format(float(v))
    return "" if v is None else str(v)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as f:
        f.write(text)
    # mkstemp creates 0600; give the result the usual umask-derived mode
    umask = os.umask(0)
    os.umask(umask)
    os.chmod(tmp, 0o666 & ~umask)
    os.replace(tmp, path)


def write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    _atomic_write(path, "\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else str(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, obj) -> None:
    _atomic_write(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


ENERGY_HEADER = ("m0_dimensionless", "h_dimensionless", "functional", "membrane_dimensionless",
                 "bending_dimensionless", "total_dimensionless")


# ---------------------------------------------------------------------------
# subcommands


def cmd_ansatz_energy(cfg: dict, out: Path, rng) -> int:
    cfg = _check(cfg, {"m0": (NUM, _REQUIRED), "h": (NUM + (list,), _REQUIRED),
                       "functional": ((str,), "sup"), "tol": (NUM, 1e-12),
                       "sample": ({"n_rho": ((int,), 256), "n_theta": ((int,), 64),
                                   "rho_min_factor": (NUM, 0.125),
                                   "format": ((str,), "json")}, None)})
    if cfg["functional"] not in FUNCTIONALS:
        raise ConfigError(f"key 'functional' must be one of {FUNCTIONALS}")
    hs = cfg["h"] if isinstance(cfg["h"], list) else [cfg["h"]]
    rows = []
    for h in hs:
        p = _params({"m0": cfg["m0"], "h": h})
        e = ansatz_energy(p, tol=float(cfg["tol"]), functional=cfg["functional"])
        rows.append(e.csv_row(p))
        if cfg["sample"] is not None:
            s = cfg["sample"]
            grid = PolarGrid.for_thickness(p.h, s["n_rho"], s["n_theta"], s["rho_min_factor"])
            ext = ".npz" if s["format"] == "npz" else ".json"
            sample_ansatz(grid, p).save(out / f"ansatz_h{p.h:.6e}{ext}")
    write_csv(out / "ansatz_energy.csv", ENERGY_HEADER, rows)
    return 0


def cmd_sample(cfg: dict, out: Path, rng) -> int:
    cfg = _check(cfg, SURFACE_SCHEMA | {"format": ((str,), "json"),
                                        "functional": ((str,), "sup")})
    p = _params(cfg)
    imm = _surface(cfg, p, rng)
    imm.save(out / ("immersion.npz" if cfg["format"] == "npz" else "immersion.json"))
    e = total_energy(imm, p, cfg["functional"])
    write_csv(out / "sample_energy.csv", ENERGY_HEADER, [e.csv_row(p)])
    return 0


def cmd_minimize(cfg: dict, out: Path, rng) -> int:
    cfg = _check(cfg, SURFACE_SCHEMA | {
        "p_schedule": ((list,), [2, 8, 32]), "max_iterations": ((int,), 200),
        "gradient_tolerance": (NUM, 1e-9), "history": ((int,), 12),
        "diagnose": ((bool,), False)})
    p = _params(cfg)
    imm = _surface(cfg, p, rng)
    try:
        oc = OptimizerConfig(p_schedule=tuple(cfg["p_schedule"]),
                             max_iterations=cfg["max_iterations"],
                             gradient_tolerance=float(cfg["gradient_tolerance"]),
                             history=cfg["history"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"key 'p_schedule'/'max_iterations': {exc}") from None
    res = minimize(imm, p, oc, diagnose=cfg["diagnose"])
    _atomic_write(out / "trace.csv", res.trace.to_csv())
    res.immersion.save(out / "minimized.json")
    write_json(out / "minimize_summary.json", res.summary())
    return 0


def _fan_pipeline(imm: Immersion, p: ConeParams, n_rays):
    fan = shoot_fan(ChartField.from_immersion(imm), p, n_rays=n_rays)
    report = {"fan": fan.summary()}
    try:
        gamma = gamma_field(polar_fields(fan))
    except Exception as exc:  # a non-diffeomorphic exponential map is reported, not fatal
        report["assumption1"] = {"passed": False, "error": str(exc)}
        return fan, None, report
    report["assumption1"] = assumption1_report(fan, gamma)
    report["linf"] = linf_diagnostic(polar_fields(fan), fan.r0, p)
    report["detestim"] = detestim_diagnostics(fan, gamma, p).as_dict()
    return fan, gamma, report


def cmd_geodesics(cfg: dict, out: Path, rng) -> int:
    cfg = _check(cfg, SURFACE_SCHEMA | {"n_rays": ((int, type(None)), None),
                                        "csv_stride": ((int,), 1)})
    p = _params(cfg)
    imm = _surface(cfg, p, rng)
    fan, _, report = _fan_pipeline(imm, p, cfg["n_rays"])
    _atomic_write(out / "rays.csv", fan.rays_csv(cfg["csv_stride"]))
    write_json(out / "geodesics.json", report)
    return 0


def cmd_curvature(cfg: dict, out: Path, rng) -> int:
    cfg = _check(cfg, SURFACE_SCHEMA | {"radii": ((list, type(None)), None),
                                        "geodesic": ((bool,), True)})
    p = _params(cfg)
    imm = _surface(cfg, p, rng)
    prof = immersion_profile(imm)
    _atomic_write(out / "kappa_profile.csv", prof.to_csv())
    summary = {"kappa_total": float(prof.kappa_values[-1]),
               "target": 2.0 * math.pi * (1.0 - p.m0)}
    if cfg["geodesic"]:
        fan, _, report = _fan_pipeline(imm, p, None)
        om = omega_fields(fan)
        ff = f_function(fan, om, p)
        _atomic_write(out / "f_function.csv", ff.to_csv())
        lo, hi = admissible_window(p, fan.C1)
        radii = cfg["radii"] or list(np.linspace(lo, hi, 5))
        summary["kappa_deviation"] = [{"R": float(R), "deviation":
                                       kappa_deviation(prof, p, float(R), fan.C1)}
                                      for R in radii]
        summary["interpolation_ratio"] = interpolation_check(ff)
        summary["G_curv_vs_jacobi"] = max(float(np.max(np.abs(o.G_curv - o.G_jacobi)))
                                          for o in om)
        summary["C1"] = fan.C1
    write_json(out / "curvature.json", summary)
    return 0


def cmd_degree(cfg: dict, out: Path, rng) -> int:
    cfg = _check(cfg, SURFACE_SCHEMA | {"R": (NUM, 1.0), "n_bands": ((int,), 200),
                                        "raster_seed": ((int,), 0)})
    p = _params(cfg)
    imm = _surface(cfg, p, rng)
    nf = surface_normal(imm)
    raster = SphereRaster.with_seed(cfg["n_bands"], cfg["raster_seed"])
    deg = degree_raster(nf, float(cfg["R"]), raster)
    _atomic_write(out / "degree.csv", deg.to_csv())
    write_json(out / "degree.json", {
        "R": deg.radius, "total_degree": total_degree_integral(deg),
        "max_residual": deg.max_residual, "level_set_perimeter": level_set_perimeter(deg),
        "boundary_variation": boundary_variation(nf, deg.radius),
        "n_bins": raster.n_bins})
    return 0


ISO_HEADER = ("sample", "radius_length", "boundary_variation_dimensionless",
              "total_degree_dimensionless", "di_dimensionless", "F_dimensionless",
              "residual_dimensionless", "passed")


def iso_rows(imm: Immersion, radii, raster, slack, label):
    recs = isoperimetric_records(surface_normal(imm), radii, raster, slack)
    return [(label, r.radius, r.boundary_variation, r.total_degree, r.di, r.F_value,
             r.residual, r.passed) for r in recs]


def cmd_isoperimetric(cfg: dict, out: Path, rng) -> int:
    cfg = _check(cfg, SURFACE_SCHEMA | {
        "radii": ((list, type(None)), None), "n_radii": ((int,), 20),
        "n_perturbations": ((int,), 0), "amplitude": (NUM, 0.01),
        "slack": (NUM, 1e-2), "n_bands": ((int,), 100), "raster_seed": ((int,), 0)})
    p = _params(cfg)
    base = _surface(cfg, p, rng)
    radii = cfg["radii"] or list(np.geomspace(p.h, 1.0, cfg["n_radii"]))
    raster = SphereRaster.with_seed(cfg["n_bands"], cfg["raster_seed"])
    rows = iso_rows(base, radii, raster, cfg["slack"], 0)
    for k in range(cfg["n_perturbations"]):
        pert = fourier_perturbation(base, rng, float(cfg["amplitude"]))
        rows += iso_rows(pert, radii, raster, cfg["slack"], k + 1)
    write_csv(out / "isoperimetric.csv", ISO_HEADER, rows)
    return 0 if all(r[-1] for r in rows) else 1


# ---------------------------------------------------------------------------
# sweep


@dataclass(frozen=True)
class SweepConfig:
    m0: float
    h_list: tuple[float, ...]
    nodes_per_decade: int = 48
    n_theta: int = 32
    pipelines: tuple[str, ...] = ("ansatz",)
    output_dir: str = "sweep_out"
    max_iterations: int = 100
    jobs: int = 1

    PIPELINES = ("ansatz", "minimize", "diagnostics")

    def __post_init__(self):
        hs = tuple(float(h) for h in self.h_list)
        object.__setattr__(self, "h_list", hs)
        object.__setattr__(self, "pipelines", tuple(self.pipelines))
        if not hs:
            raise ConfigError("key 'h_list' must be nonempty")
        if any(not (0.0 < h < math.exp(-1.0)) for h in hs):
            raise ConfigError("key 'h_list': every h must lie in (0, 1/e)")
        if any(b >= a for a, b in zip(hs, hs[1:])):
            raise ConfigError("key 'h_list' must be strictly descending")
        if not 0.0 < self.m0 < 1.0:
            raise ConfigError("key 'm0' must lie in (0, 1)")
        bad = [q for q in self.pipelines if q not in self.PIPELINES]
        if bad or not self.pipelines:
            raise ConfigError(f"key 'pipelines' must be a nonempty subset of {self.PIPELINES}")
        if self.nodes_per_decade < 4 or self.n_theta < 16:
            raise ConfigError("key 'nodes_per_decade'/'n_theta' too small")

    @classmethod
    def from_json(cls, cfg: dict) -> "SweepConfig":
        c = _check(cfg, {"m0": (NUM, _REQUIRED), "h_list": ((list,), _REQUIRED),
                         "nodes_per_decade": ((int,), 48), "n_theta": ((int,), 32),
                         "pipelines": ((list,), ["ansatz"]), "output_dir": ((str,), "sweep_out"),
                         "max_iterations": ((int,), 100), "jobs": ((int,), 1)})
        return cls(float(c["m0"]), tuple(c["h_list"]), c["nodes_per_decade"], c["n_theta"],
                   tuple(c["pipelines"]), c["output_dir"], c["max_iterations"], c["jobs"])

    def grid_for(self, h: float) -> PolarGrid:
        rho_min = h / 8.0
        n = max(16, int(math.ceil(self.nodes_per_decade * math.log10(1.0 / rho_min))))
        return PolarGrid(n, self.n_theta, rho_min)


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    residuals: tuple[float, ...]
    C_star_reference: float
    n_points: int

    @property
    def relative_slope_error(self) -> float:
        return abs(self.slope - self.C_star_reference) / self.C_star_reference

    @classmethod
    def fit(cls, h, energy_over_h2, m0: float) -> "ScalingFit":
        h = np.asarray(h, float)
        y = np.asarray(energy_over_h2, float)
        if h.size < 4:
            raise ValueError(f"scaling fit needs at least 4 sweep points, got {h.size}")
        x = np.abs(np.log(h))
        slope, intercept = np.polyfit(x, y, 1)
        res = y - (slope * x + intercept)
        return cls(float(slope), float(intercept), tuple(float(r) for r in res),
                   2.0 * math.pi * (1.0 - m0 * m0), int(h.size))

    def as_dict(self) -> dict:
        return asdict(self) | {"relative_slope_error": self.relative_slope_error}


SWEEP_HEADER = ("h_dimensionless", "log_h_abs", "ansatz_bending_over_h2", "sampled_total_over_h2",
                "minimized_total_over_h2", "assumption1_passed", "C1_dimensionless", "error")


def _sweep_point(config: SweepConfig, h: float, seed: int) -> tuple:
    p = ConeParams(config.m0, h)
    row = {"h": h, "L": p.log_h, "ansatz": None, "sampled": None, "minimized": None,
           "a1": None, "C1": None, "error": ""}
    try:
        if "ansatz" in config.pipelines:
            row["ansatz"] = ansatz_energy(p).total / h**2
        if {"minimize", "diagnostics"} & set(config.pipelines):
            imm = sample_ansatz(config.grid_for(h), p)
            row["sampled"] = total_energy(imm, p).total / h**2
            if "minimize" in config.pipelines:
                res = minimize(imm, p, OptimizerConfig(max_iterations=config.max_iterations))
                row["minimized"] = res.energy.total / h**2
                imm = res.immersion
            if "diagnostics" in config.pipelines:
                fan, gamma, report = _fan_pipeline(imm, p, None)
                row["a1"] = bool(report["assumption1"].get("passed", False))
                row["C1"] = fan.C1
    except Exception as exc:  # recorded per point; the sweep continues
        row["error"] = f"{type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")
    return (row["h"], row["L"], row["ansatz"], row["sampled"], row["minimized"], row["a1"],
            row["C1"], row["error"])


def run_sweep(config: SweepConfig, seed: int = 0) -> tuple[ScalingFit | None, list[tuple]]:
    """Per-``h`` rows plus the least-squares fit of ``E/h^2`` against ``|log h|``."""
    out = Path(config.output_dir)
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as ex:
            rows = list(ex.map(_sweep_point, [config] * len(config.h_list), config.h_list,
                               [seed] * len(config.h_list)))
    else:
        rows = [_sweep_point(config, h, seed) for h in config.h_list]
    write_csv(out / "sweep.csv", SWEEP_HEADER, rows)
    fits = {}
    for name, col in (("ansatz", 2), ("sampled", 3), ("minimized", 4)):
        pts = [(r[0], r[col]) for r in rows if r[col] is not None]
        if len(pts) >= 4:
            fits[name] = ScalingFit.fit(*zip(*pts), config.m0)
    write_json(out / "fit.json", {k: v.as_dict() for k, v in fits.items()}
               | {"C_star_reference": 2.0 * math.pi * (1.0 - config.m0**2)})
    if "ansatz" in config.pipelines and "ansatz" not in fits:
        raise ValueError("scaling fit needs at least 4 sweep points with an ansatz energy")
    return fits.get("ansatz") or next(iter(fits.values()), None), rows


def cmd_sweep(cfg: dict, out: Path, rng, seed: int = 0, jobs: int | None = None) -> int:
    cfg = dict(cfg)
    cfg.setdefault("output_dir", str(out))
    if jobs is not None:
        cfg["jobs"] = jobs
    config = SweepConfig.from_json(cfg)
    fit, rows = run_sweep(config, seed)
    return 0 if all(not r[-1] for r in rows) else 1


COMMANDS = {
    "ansatz-energy": cmd_ansatz_energy,
    "sample": cmd_sample,
    "minimize": cmd_minimize,
    "geodesics": cmd_geodesics,
    "curvature": cmd_curvature,
    "degree": cmd_degree,
    "isoperimetric": cmd_isoperimetric,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="conesheet", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config", help="JSON config file")
    ap.add_argument("--out", default=".", help="output directory (default: current)")
    ap.add_argument("--seed", type=int, default=0, help="seed for randomized sweeps")
    ap.add_argument("--jobs", type=int, default=None, help="worker processes for sweeps")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with open(args.config) as f:
            cfg = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    try:
        if args.command == "sweep":
            return cmd_sweep(cfg, out, rng, args.seed, args.jobs)
        return COMMANDS[args.command](cfg, out, rng)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
