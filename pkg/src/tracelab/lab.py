"""Experiment configuration, dyadic sweeps, verdicts and invariant checks.

Every experiment produces rows ``(experiment, R, rho, metric, value,
uncertainty)``. Metric names may carry the swept variable as a suffix, e.g.
``ball_mass:r=0.0078125``; the verdict is recomputed from the rows alone by
the checks registered for the experiment, so re-fitting an emitted CSV
reproduces it.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .estimators import (PACKET_CUTOFF, degenerate_projection_sup, extreme_tube_mass,
                         hyperbolic_generator_mass, max_overlap, multiplicity_audit, packet_energy,
                         packet_window, pushforward_ball_mass, random_relevant_directions,
                         schur_row_sum, sublevel_mass, tail_weighted_extreme_mass,
                         tangency_gradient_floor)
from .exceptions import ContractError, FitError, TraceLabError
from .fitting import fit_loglog
from .frequency import OVERLAP_BOUND, TAU0_DEFAULT, partition_weights, tile_annulus
from .packets import Tube, build_tube_family, evaluate, frequency_support_samples, line_profile, \
    make_model_packet, radial_profile
from .square_function import PacketSum, ambient_norm, diagonal_cost_audit, seeded_unit_phases, \
    square_function
from .surface import QuadraticSurface, build_quadrature, integrate, tangency_line, \
    window_quadrature

EXPERIMENTS = (
    "tangent-packet", "transversal-packet", "extreme-mass", "tail-mass", "sublevel", "schur",
    "projection-transversal", "projection-degenerate", "multiplicity", "overlap",
    "diagonal-audit", "hyperbolic-contrast",
)
DEFAULT_R = (2**8, 2**10, 2**12, 2**14, 2**16)
GEOMETRIC_TOLERANCE = 0.03
PACKET_TOLERANCE = 0.05
CSV_FIELDS = ("experiment", "R", "rho", "metric", "value", "uncertainty")

E1 = np.array([1.0, 0.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])

# Per-experiment defaults; any key can be overridden from the [params] table.
DEFAULT_PARAMS: dict[str, dict] = {
    "tangent-packet": {"cells": 512},
    "transversal-packet": {"cells": 512},
    "extreme-mass": {"cells": 1024, "band_factor": 3.0},
    "tail-mass": {"cells": 1024, "N": 3.0},
    "sublevel": {"cells": 1024, "sigma_R": 4096, "sigmas": [2**-6, 2**-5, 2**-4, 2**-3],
                 "fixed_sigma": 2**-4},
    "schur": {"cells": 128, "pivots": [[-1, 0, 0], [0, 0, 0], [1, 0, 0]]},
    "projection-transversal": {"cells": 512, "radii": [2**-7, 2**-6, 2**-5, 2**-4, 2**-3]},
    "projection-degenerate": {"cells": 512, "radius_R": 4096,
                              "radius_fractions": [1 / 64, 1 / 32, 1 / 16, 1 / 8, 1 / 4],
                              "sup_fraction": 1 / 8, "sup_tolerance": 0.1},
    "multiplicity": {"fibers": 10_000},
    "overlap": {"ks": [0, 1, 2, 3, 4, 5], "samples": 10_000, "tolerance": 0.1},
    "diagonal-audit": {"cells": 512, "transverse": 3, "longitudinal": 1, "band_factor": 3.0,
                       "beta": 1.5},
    "hyperbolic-contrast": {"cells": 2048, "tolerance": 0.1, "elliptic_exponent": 1.5},
}
# Sweeps over another variable run at one R; the Schur sweep stops at 2^14 for runtime.
DEFAULT_SWEEPS: dict[str, tuple[int, ...]] = {
    "schur": (2**8, 2**10, 2**12, 2**14),
    "projection-transversal": (2**12,),
    "overlap": (2**16,),
}


# ---------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------

def _is_power_of_two(n) -> bool:
    return isinstance(n, (int, np.integer)) and n >= 1 and (int(n) & (int(n) - 1)) == 0


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved configuration of one sweep.

    ``rho`` is derived from ``R`` and never stored. ``params`` holds the
    experiment-specific knobs merged over ``DEFAULT_PARAMS``.
    """

    experiment: str
    R: tuple[int, ...] | None = None
    lambda1: float = 1.0
    lambda2: float = 1.0
    contrast: bool = False
    tau0: float = TAU0_DEFAULT
    plateau_fraction: float = 0.5
    seed: int = 0
    convergence_tolerance: float = 0.05
    tolerance: float | None = None
    output_dir: str = "trace-lab-out"
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ContractError(f"unknown experiment {self.experiment!r}")
        R = self.R if self.R is not None else DEFAULT_SWEEPS.get(self.experiment, DEFAULT_R)
        R = tuple(int(r) for r in R)
        if not R:
            raise ContractError("R list is empty")
        if any(not _is_power_of_two(r) for r in R):
            raise ContractError(f"R values must be powers of 2, got {R}")
        if any(b <= a for a, b in zip(R, R[1:])):
            raise ContractError(f"R values must be increasing, got {R}")
        object.__setattr__(self, "R", R)
        merged = dict(DEFAULT_PARAMS[self.experiment])
        merged.update(self.params)
        object.__setattr__(self, "params", merged)

    @property
    def rho(self) -> tuple[float, ...]:
        return tuple(r ** -0.5 for r in self.R)

    def surface(self) -> QuadraticSurface:
        return QuadraticSurface(self.lambda1, self.lambda2, contrast=self.contrast)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["R"] = list(self.R)
        d["params"] = {k: self.params[k] for k in sorted(self.params)}
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_mapping(cls, data: Mapping, experiment: str | None = None) -> "ExperimentConfig":
        """Build from the TOML layout (sections ``experiment``, ``surface``, ...)."""
        exp = dict(data.get("experiment", {}))
        surf = dict(data.get("surface", {}))
        freq = dict(data.get("frequency", {}))
        quad = dict(data.get("quadrature", {}))
        tol = dict(data.get("tolerances", {}))
        out = dict(data.get("output", {}))
        params = dict(data.get("params", {}))
        eid = experiment or exp.get("id")
        if eid is None:
            raise ContractError("no experiment id given")
        if "cells" in quad:
            params.setdefault("cells", int(quad["cells"]))
        return cls(
            experiment=eid,
            R=tuple(exp["R"]) if "R" in exp else None,
            lambda1=float(surf.get("lambda1", 1.0)),
            lambda2=float(surf.get("lambda2", 1.0)),
            contrast=bool(surf.get("contrast", False)),
            tau0=float(freq.get("tau0", TAU0_DEFAULT)),
            plateau_fraction=float(freq.get("plateau_fraction", 0.5)),
            seed=int(exp.get("seed", 0)),
            convergence_tolerance=float(quad.get("convergence_tolerance", 0.05)),
            tolerance=tol.get("slope"),
            output_dir=str(out.get("dir", "trace-lab-out")),
            params=params,
        )

    @classmethod
    def from_toml(cls, path, experiment: str | None = None, *,
                  fallback: str | None = None) -> "ExperimentConfig":
        """Read a TOML file; ``fallback`` names the experiment when the file has no id."""
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        if experiment is None and "id" not in data.get("experiment", {}):
            experiment = fallback
        return cls.from_mapping(data, experiment)

    @classmethod
    def default(cls, experiment: str) -> "ExperimentConfig":
        return cls.from_mapping({}, experiment)

    def with_R_range(self, r_min: int | None = None, r_max: int | None = None):
        R = tuple(r for r in self.R if (r_min is None or r >= r_min)
                  and (r_max is None or r <= r_max))
        return replace(self, R=R, params=dict(self.params))


# ---------------------------------------------------------------------
# Rows and checks
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class Row:
    experiment: str
    R: int
    rho: float
    metric: str
    value: float
    uncertainty: float

    @property
    def base_metric(self) -> str:
        return self.metric.split(":", 1)[0]

    def variable(self, name: str) -> float:
        if name == "R":
            return float(self.R)
        if name == "rho":
            return self.rho
        _, _, suffix = self.metric.partition(":")
        key, _, val = suffix.partition("=")
        if key != name:
            raise FitError(f"metric {self.metric!r} carries no variable {name!r}")
        return float(val)

    def converged(self, tol: float) -> bool:
        if self.uncertainty == 0:
            return True
        return self.value != 0 and self.uncertainty <= tol * abs(self.value)


def _metric(name: str, var: str | None = None, value: float | None = None) -> str:
    return name if var is None else f"{name}:{var}={value!r}"


def _row(experiment, R, metric, value, uncertainty=0.0) -> Row:
    return Row(experiment, int(R), float(R) ** -0.5, metric, float(value), float(uncertainty))


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    expected: float
    tolerance: float
    observed: float
    fit: dict | None = None


@dataclass(frozen=True)
class SlopeCheck:
    """Log-log slope of ``metric`` against a variable lies within ``tolerance`` of ``expected``."""

    metric: str
    variable: str
    expected: float
    tolerance: float
    max_residual: float | None = None
    below: float | None = None

    def evaluate(self, rows: list[Row]) -> CheckResult:
        sel = [r for r in rows if r.base_metric == self.metric]
        fit = fit_loglog([(r.variable(self.variable), r.value) for r in sel])
        ok = abs(fit.slope - self.expected) <= self.tolerance
        if self.max_residual is not None:
            ok &= fit.residual <= self.max_residual
        if self.below is not None:
            ok &= fit.slope < self.below
        fd = {"slope": fit.slope, "stderr": fit.stderr, "residual": fit.residual,
              "intercept": fit.intercept, "points": len(sel)}
        return CheckResult(f"slope[{self.metric} vs {self.variable}]", bool(ok), self.expected,
                           self.tolerance, fit.slope, fd)


@dataclass(frozen=True)
class BandCheck:
    """All values of ``metric`` lie within a factor ``factor`` of each other."""

    metric: str
    factor: float

    def evaluate(self, rows: list[Row]) -> CheckResult:
        vals = [r.value for r in rows if r.base_metric == self.metric]
        if not vals or min(vals) <= 0:
            return CheckResult(f"band[{self.metric}]", False, self.factor, 0.0, math.inf)
        spread = max(vals) / min(vals)
        return CheckResult(f"band[{self.metric}]", spread < self.factor, self.factor, 0.0, spread)


@dataclass(frozen=True)
class UpperCheck:
    """All values of ``metric`` are at most ``bound`` (exact comparison)."""

    metric: str
    bound: float

    def evaluate(self, rows: list[Row]) -> CheckResult:
        vals = [r.value for r in rows if r.base_metric == self.metric]
        top = max(vals) if vals else math.inf
        return CheckResult(f"upper[{self.metric}]", bool(vals) and top <= self.bound, self.bound,
                           0.0, top)


def experiment_checks(experiment: str, params: Mapping, tolerance: float | None = None) -> list:
    """The checks deciding the verdict; the first slope check is the headline fit."""
    def tol(default):
        return default if tolerance is None else float(tolerance)
    g, p = GEOMETRIC_TOLERANCE, PACKET_TOLERANCE
    if experiment == "tangent-packet":
        return [SlopeCheck("trace_ratio", "R", 0.125, tol(p), max_residual=0.02)]
    if experiment == "transversal-packet":
        return [SlopeCheck("packet_energy", "R", 0.0, tol(p))]
    if experiment == "extreme-mass":
        return [SlopeCheck("extreme_mass", "rho", 1.5, tol(g)),
                BandCheck("normalized_mass", params["band_factor"])]
    if experiment == "tail-mass":
        return [SlopeCheck("tail_weighted_mass", "rho", 1.5, tol(g))]
    if experiment == "sublevel":
        return [SlopeCheck("sublevel_mass", "sigma", 1.0, tol(p)),
                SlopeCheck("sublevel_mass_fixed_sigma", "rho", 0.5, 0.1)]
    if experiment == "schur":
        return [SlopeCheck("max_row_sum", "rho", -0.5, tol(p))]
    if experiment == "projection-transversal":
        return [SlopeCheck("ball_mass", "r", 2.0, tol(g))]
    if experiment == "projection-degenerate":
        return [SlopeCheck("ball_mass_outside", "r", 2.0, tol(p)),
                SlopeCheck("sup_ratio", "rho", -0.5, params["sup_tolerance"])]
    if experiment == "multiplicity":
        return [UpperCheck("max_multiplicity", 2), UpperCheck("violations", 0)]
    if experiment == "overlap":
        return [SlopeCheck("max_overlap", "dilation", 2.0, tol(params["tolerance"]))]
    if experiment == "diagonal-audit":
        return [BandCheck("audit_constant", params["band_factor"])]
    if experiment == "hyperbolic-contrast":
        return [SlopeCheck("generator_mass", "rho", 1.0, tol(params["tolerance"]),
                           below=params["elliptic_exponent"] - GEOMETRIC_TOLERANCE)]
    raise ContractError(f"unknown experiment {experiment!r}")


# ---------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingReport:
    experiment: str
    rows: tuple[Row, ...]
    checks: tuple[CheckResult, ...]
    convergence_tolerance: float
    unconverged: tuple[str, ...]
    config: dict
    config_hash: str
    seed: int
    version: str = __version__

    @property
    def verdict(self) -> bool:
        return all(c.passed for c in self.checks) and not self.unconverged

    @property
    def headline(self) -> CheckResult:
        return self.checks[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in self.rows:
            w.writerow([r.experiment, r.R, repr(r.rho), r.metric, repr(r.value),
                        repr(r.uncertainty)])
        return buf.getvalue()

    def to_json_dict(self) -> dict:
        h = self.headline
        return {
            "experiment": self.experiment,
            "config_hash": self.config_hash,
            "config": self.config,
            "seed": self.seed,
            "version": self.version,
            "rows": [asdict(r) for r in self.rows],
            "fit": h.fit,
            "expected": h.expected,
            "tolerance": h.tolerance,
            "checks": [asdict(c) for c in self.checks],
            "convergence_tolerance": self.convergence_tolerance,
            "unconverged": list(self.unconverged),
            "verdict": "pass" if self.verdict else "fail",
        }

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cp, jp = out / f"{self.experiment}.csv", out / f"{self.experiment}.json"
        cp.write_text(self.to_csv())
        jp.write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n")
        return cp, jp

    def summary_lines(self) -> list[str]:
        out = []
        for c in self.checks:
            out.append(f"{self.experiment} {c.name}: observed {c.observed:.4f}, expected "
                       f"{c.expected} +/- {c.tolerance} -> {'PASS' if c.passed else 'FAIL'}")
        if self.unconverged:
            out.append(f"{self.experiment}: {len(self.unconverged)} rows failed self-convergence")
        out.append(f"{self.experiment}: verdict {'PASS' if self.verdict else 'FAIL'}")
        return out


def assess(experiment: str, rows: Iterable[Row], params: Mapping, *,
           tolerance: float | None = None, convergence_tolerance: float = 0.05,
           config: dict | None = None, config_hash: str = "", seed: int = 0) -> ScalingReport:
    """Verdict from rows alone."""
    rows = tuple(rows)
    checks = []
    for chk in experiment_checks(experiment, params, tolerance):
        try:
            checks.append(chk.evaluate(list(rows)))
        except FitError as exc:
            checks.append(CheckResult(f"{type(chk).__name__}[{chk.metric}]: {exc}", False,
                                      getattr(chk, "expected", math.nan),
                                      getattr(chk, "tolerance", math.nan), math.nan))
    bad = tuple(f"R={r.R} {r.metric}" for r in rows if not r.converged(convergence_tolerance))
    return ScalingReport(experiment, rows, tuple(checks), convergence_tolerance, bad,
                         config or {}, config_hash, seed)


def read_rows(path) -> list[Row]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ContractError(f"{path}: unexpected CSV header {reader.fieldnames}")
        return [Row(r["experiment"], int(r["R"]), float(r["rho"]), r["metric"],
                    float(r["value"]), float(r["uncertainty"])) for r in reader]


def refit_csv(path, json_path=None) -> ScalingReport:
    """Recompute the verdict of an emitted CSV (tolerances from the JSON report if present)."""
    rows = read_rows(path)
    if not rows:
        raise ContractError(f"{path}: no rows")
    experiment = rows[0].experiment
    params, tol, ctol, cfg, h, seed = dict(DEFAULT_PARAMS[experiment]), None, 0.05, {}, "", 0
    jp = Path(json_path) if json_path else Path(path).with_suffix(".json")
    if jp.exists():
        meta = json.loads(jp.read_text())
        cfg = meta.get("config", {})
        params.update(cfg.get("params", {}))
        tol = cfg.get("tolerance")
        ctol = meta.get("convergence_tolerance", ctol)
        h, seed = meta.get("config_hash", ""), meta.get("seed", 0)
    return assess(experiment, rows, params, tolerance=tol, convergence_tolerance=ctol,
                  config=cfg, config_hash=h, seed=seed)


# ---------------------------------------------------------------------
# Experiments: each returns (R, task) pairs; a task produces rows for one scale
# ---------------------------------------------------------------------

Task = Callable[[], list[Row]]


def _tangent_packet(cfg: ExperimentConfig, direction, name, transform):
    surface = cfg.surface()

    def task(R):
        rho = R ** -0.5
        box = tile_annulus(R, cfg.plateau_fraction).locate(direction)
        p = make_model_packet(box, np.zeros(3), rho)
        m = packet_energy(surface, p, cells=cfg.params["cells"])
        value, unc = transform(m.value, m.uncertainty + m.tail_bound, ambient_norm(
            PacketSum.of([p])))
        return [_row(cfg.experiment, R, name, value, unc)]
    return [(R, lambda R=R: task(R)) for R in cfg.R]


def _ratio(energy, unc, norm):
    ratio = math.sqrt(energy) / norm
    return ratio, 0.5 * unc / math.sqrt(energy) / norm if energy > 0 else unc


def _plain(energy, unc, norm):
    return energy / norm**2, unc / norm**2


def _mass_sweep(cfg: ExperimentConfig, name, fn, extra=None):
    def task(R):
        rho = R ** -0.5
        m = fn(rho)
        rows = [_row(cfg.experiment, R, name, m.value, m.uncertainty + m.tail_bound)]
        if extra:
            rows += extra(R, rho, m)
        return rows
    return [(R, lambda R=R: task(R)) for R in cfg.R]


def _tasks(cfg: ExperimentConfig) -> list[tuple[int, Task]]:
    e = cfg.experiment
    P = cfg.params
    if e == "tangent-packet":
        return _tangent_packet(cfg, E1, "trace_ratio", _ratio)
    if e == "transversal-packet":
        return _tangent_packet(cfg, E3, "packet_energy", _plain)
    surface = cfg.surface() if e != "hyperbolic-contrast" else None
    if e == "extreme-mass":
        return _mass_sweep(
            cfg, "extreme_mass",
            lambda rho: extreme_tube_mass(surface, E1, rho, Tube.through(np.zeros(3), E1, rho),
                                          cells=P["cells"]),
            lambda R, rho, m: [_row(e, R, "normalized_mass", m.value / rho**1.5,
                                    m.uncertainty / rho**1.5)])
    if e == "tail-mass":
        return _mass_sweep(
            cfg, "tail_weighted_mass",
            lambda rho: tail_weighted_extreme_mass(surface, E1, rho,
                                                   Tube.through(np.zeros(3), E1, rho), P["N"],
                                                   cells=P["cells"]))
    if e == "hyperbolic-contrast":
        return _mass_sweep(cfg, "generator_mass",
                           lambda rho: hyperbolic_generator_mass(rho, cells=P["cells"]))
    if e == "sublevel":
        return _sublevel_tasks(cfg, surface)
    if e == "schur":
        return _schur_tasks(cfg, surface)
    if e == "projection-transversal":
        return _projection_transversal_tasks(cfg, surface)
    if e == "projection-degenerate":
        return _projection_degenerate_tasks(cfg, surface)
    if e == "multiplicity":
        return _multiplicity_tasks(cfg, surface)
    if e == "overlap":
        return _overlap_tasks(cfg)
    if e == "diagonal-audit":
        return _audit_tasks(cfg, surface)
    raise ContractError(f"unknown experiment {e!r}")


def _sublevel_tasks(cfg, surface):
    P, e = cfg.params, cfg.experiment
    Rs = int(P["sigma_R"])

    def sigma_task(sigma):
        rho = Rs ** -0.5
        m = sublevel_mass(surface, E1, rho, Tube.through(np.zeros(3), E1, rho), sigma,
                          cells=P["cells"])
        return [_row(e, Rs, _metric("sublevel_mass", "sigma", float(sigma)), m.value,
                     m.uncertainty)]

    def rho_task(R):
        rho = R ** -0.5
        m = sublevel_mass(surface, E1, rho, Tube.through(np.zeros(3), E1, rho),
                          P["fixed_sigma"], cells=P["cells"])
        return [_row(e, R, "sublevel_mass_fixed_sigma", m.value, m.uncertainty)]
    tasks = [(Rs, lambda s=s: sigma_task(s)) for s in P["sigmas"]]
    return tasks + [(R, lambda R=R: rho_task(R)) for R in cfg.R if R ** -0.5 <= P["fixed_sigma"]]


def _schur_tasks(cfg, surface):
    P, e = cfg.params, cfg.experiment

    def task(R):
        rho = R ** -0.5
        box = tile_annulus(R, cfg.plateau_fraction).locate(E1)
        fam = build_tube_family(box, rho, 1.0)
        best, best_c, tail = -1.0, 0.0, 0.0
        for m1, m2, j in P["pivots"]:
            i = fam.index_of(m1, m2, j)
            fine = schur_row_sum(fam, i, surface, E1, rho, cells=P["cells"])
            if fine.value > best:
                coarse = schur_row_sum(fam, i, surface, E1, rho, cells=P["cells"] // 2)
                best, best_c, tail = fine.value, coarse.value, fine.tail_bound
        return [_row(e, R, "max_row_sum", best, 2 * abs(best - best_c)),
                _row(e, R, "tail_bound", tail)]
    return [(R, lambda R=R: task(R)) for R in cfg.R]


def _projection_transversal_tasks(cfg, surface):
    P, e = cfg.params, cfg.experiment

    def task(R, r):
        m = pushforward_ball_mass(surface, E3, np.zeros(3), r, cells=P["cells"])
        return [_row(e, R, _metric("ball_mass", "r", float(r)), m.value, m.uncertainty)]
    return [(R, lambda R=R, r=r: task(R, r)) for R in cfg.R for r in P["radii"]]


def _projection_degenerate_tasks(cfg, surface):
    P, e = cfg.params, cfg.experiment
    Rr = int(P["radius_R"])
    rho_r = Rr ** -0.5
    z = surface.chart(np.array([2 * math.sqrt(rho_r), 0.0]))

    def radius_task(f):
        r = f * rho_r
        m = pushforward_ball_mass(surface, E1, z, r, ("outside_extreme", rho_r), cells=P["cells"])
        return [_row(e, Rr, _metric("ball_mass_outside", "r", float(r)), m.value, m.uncertainty)]

    def sup_task(R):
        rho = R ** -0.5
        r = P["sup_fraction"] * rho
        s = degenerate_projection_sup(surface, E1, rho, r, cells=P["cells"])
        return [_row(e, R, "sup_ratio", s.value, s.mass.uncertainty / r**2)]
    return [(Rr, lambda f=f: radius_task(f)) for f in P["radius_fractions"]] + \
        [(R, lambda R=R: sup_task(R)) for R in cfg.R]


def _multiplicity_tasks(cfg, surface):
    P, e = cfg.params, cfg.experiment
    per = int(math.isqrt(int(P["fibers"])))
    n_dirs = -(-int(P["fibers"]) // per)

    def task(R):
        worst, bad, n = multiplicity_audit(surface, R ** -0.5, n_directions=n_dirs,
                                           per_direction=per, seed=cfg.seed)
        return [_row(e, R, "max_multiplicity", worst), _row(e, R, "violations", bad),
                _row(e, R, "fibers", n)]
    return [(R, lambda R=R: task(R)) for R in cfg.R]


def _overlap_tasks(cfg):
    P, e = cfg.params, cfg.experiment

    def task(R):
        rho = R ** -0.5
        box = tile_annulus(R, cfg.plateau_fraction).locate(E1)
        fam = build_tube_family(box, rho, 1.0)
        counts = max_overlap(fam, P["ks"], int(P["samples"]), seed=cfg.seed)
        return [_row(e, R, _metric("max_overlap", "dilation", float(2**k)), c)
                for k, c in counts.items()]
    return [(R, lambda R=R: task(R)) for R in cfg.R]


def tangent_family_sum(R: int, *, transverse: int = 3, longitudinal: int = 1, seed: int = 0,
                       plateau_fraction: float = 0.5) -> PacketSum:
    """Seeded unit-phase sum over the tangent family near the origin."""
    rho = R ** -0.5
    box = tile_annulus(R, plateau_fraction).locate(E1)
    fam = build_tube_family(box, rho, 1.0)
    idx = [fam.index_of(m1, m2, j)
           for j in range(-longitudinal, longitudinal + 1)
           for m1 in range(-transverse, transverse + 1)
           for m2 in range(-transverse, transverse + 1)]
    return PacketSum.of([fam.packet(i) for i in idx], seeded_unit_phases(len(idx), seed))


def _audit_tasks(cfg, surface):
    P, e = cfg.params, cfg.experiment

    def task(R):
        ps = tangent_family_sum(R, transverse=P["transverse"], longitudinal=P["longitudinal"],
                                seed=cfg.seed, plateau_fraction=cfg.plateau_fraction)
        rho = R ** -0.5
        center = ps.terms[len(ps) // 2][1]
        pred = packet_window(surface, center, PACKET_CUTOFF + math.sqrt(2) * P["transverse"])
        vals = []
        for n in (P["cells"], P["cells"] // 2):
            q = window_quadrature(surface, pred, rho / 2, n)
            vals.append(diagonal_cost_audit(ps, q, P["beta"], tau0=cfg.tau0))
        fine, coarse = vals
        unc = 2 * abs(fine.constant - coarse.constant)
        share = fine.nontransversal / fine.lhs if fine.lhs else 0.0
        return [_row(e, R, "audit_constant", fine.constant, unc),
                _row(e, R, "nontransversal_share", share)]
    return [(R, lambda R=R: task(R)) for R in cfg.R]


def thread_count() -> int:
    env = os.environ.get("TRACE_LAB_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ContractError("TRACE_LAB_THREADS must be a positive integer")
        return n
    return os.cpu_count() or 1


def _run_task(R, task):
    try:
        return task()
    except TraceLabError as exc:
        raise type(exc)(f"at R={R}: {exc}") from exc


def collect_rows(cfg: ExperimentConfig, threads: int | None = None) -> list[Row]:
    """Rows of a sweep, in task order whatever the thread count."""
    tasks = _tasks(cfg)
    n = threads or thread_count()
    if n == 1 or len(tasks) == 1:
        parts = [_run_task(R, t) for R, t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=min(n, len(tasks))) as ex:
            parts = list(ex.map(lambda rt: _run_task(*rt), tasks))
    return [row for part in parts for row in part]


def run_experiment(config: ExperimentConfig, *, threads: int | None = None,
                   out_dir=None, write: bool = True) -> ScalingReport:
    """Run a sweep, assess it and (by default) write ``<id>.csv`` and ``<id>.json``."""
    rows = collect_rows(config, threads)
    report = assess(config.experiment, rows, config.params, tolerance=config.tolerance,
                    convergence_tolerance=config.convergence_tolerance,
                    config=config.to_dict(), config_hash=config.config_hash(), seed=config.seed)
    if write:
        report.write(out_dir if out_dir is not None else config.output_dir)
    return report


# ---------------------------------------------------------------------
# Invariant suites
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class InvariantItem:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class InvariantSummary:
    items: tuple[InvariantItem, ...]

    @property
    def passed(self) -> bool:
        return all(i.passed for i in self.items)

    def lines(self) -> list[str]:
        return [f"{'PASS' if i.passed else 'FAIL'} {i.name}: {i.detail}" for i in self.items]


def _surface_items(surface, rng):
    items = []
    u = rng.uniform(-0.5, 0.5, size=(2000, 2))
    n = surface.normal(u)
    dev = float(np.abs(np.linalg.norm(n, axis=1) - 1).max())
    items.append(InvariantItem("surface.normal_unit", dev <= 1e-12, f"max | |n|-1 | = {dev:.2e}"))
    h = 1e-6
    worst = 0.0
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        d = (surface.chart(u + e) - surface.chart(u - e)) / (2 * h)
        worst = max(worst, float(np.abs(np.einsum("ij,ij->i", d, n)).max()))
    items.append(InvariantItem("surface.normal_orthogonal", worst <= 1e-8,
                               f"max |n . dX| = {worst:.2e}"))
    dirs = random_relevant_directions(surface, 100, 0)
    line_dev = 0.0
    for v in dirs:
        pts = tangency_line(surface, v).points(33)
        line_dev = max(line_dev, float(np.abs(surface.tangency_values(pts, v)).max()))
    items.append(InvariantItem("surface.tangency_line", line_dev <= 1e-12,
                               f"max |h_v| on Z_v = {line_dev:.2e}"))
    floor = tangency_gradient_floor(surface, directions=dirs)
    items.append(InvariantItem("surface.tangency_gradient_floor", floor > 0,
                               f"min |grad h_v| = {floor:.4f}"))
    q = build_quadrature(surface, 64)
    a = integrate(q, lambda qq: qq.x[:, 2])
    b = integrate(q, lambda qq: qq.x[:, 2], chunk_size=777)
    items.append(InvariantItem("surface.reduction_order", a == b,
                               "chunked and unchunked sums agree bitwise" if a == b
                               else f"{a!r} != {b!r}"))
    return items


def _frequency_items(cfg, rng):
    items = []
    R = cfg.R[0]
    T = tile_annulus(R, cfg.plateau_fraction)
    W = partition_weights(T)
    d = rng.normal(size=(2000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    xi = d * (R + rng.uniform(-0.5, 0.5, size=(2000, 1)))
    tot = W.total(xi)
    dev = float(np.abs(tot - 1).max())
    items.append(InvariantItem("frequency.partition_sum", dev <= 1e-8,
                               f"R={R}: max |sum psi - 1| = {dev:.2e}"))
    ids, vals = W.evaluate(xi)
    overlap = int((vals > 0).sum(axis=1).max())
    items.append(InvariantItem("frequency.bounded_overlap", overlap <= OVERLAP_BOUND,
                               f"max boxes per point = {overlap}"))
    ids = rng.choice(len(T), size=min(64, len(T)), replace=False)
    boxes = [T.box(0), T.box(len(T) - 1)] + [T.box(int(i)) for i in ids]
    worst = 1.0
    for box in boxes:
        pts = box.plateau_samples()
        worst = min(worst, float(W.weight(box, pts).min()))
    items.append(InvariantItem("frequency.plateau_identity", worst == 1.0,
                               f"min weight of a box on its own plateau = {worst:.6f}"))
    return items


def _packet_items(cfg, surface, rng):
    items = []
    a, b = radial_profile(), line_profile()
    na, nb = (float(np.ravel(p.autocorrelation(0.0))[0]) for p in (a, b))
    ok = abs(na - 1) <= 1e-6 and abs(nb - 1) <= 1e-6
    items.append(InvariantItem("packets.normalization", ok,
                               f"||a||^2 = {na:.9f}, ||b||^2 = {nb:.9f}"))
    worst_loc, worst_norm = True, 0.0
    for R in cfg.R:
        T = tile_annulus(R, cfg.plateau_fraction)
        box = T.locate(E1)
        p = make_model_packet(box, np.zeros(3), R ** -0.5)
        worst_loc &= bool(box.in_plateau(frequency_support_samples(p)).all())
        worst_norm = max(worst_norm, abs(ambient_norm(PacketSum.of([p])) - 1))
    items.append(InvariantItem("packets.frequency_localization", worst_loc,
                               "model packet supports lie in their plateaus"))
    items.append(InvariantItem("packets.ambient_norm", worst_norm <= 1e-6,
                               f"max | ||phi|| - 1 | = {worst_norm:.2e}"))
    return items


def _persistence_item(cfg, surface, rng):
    R = cfg.R[len(cfg.R) // 2]
    rho = R ** -0.5
    T = tile_annulus(R, cfg.plateau_fraction)
    W = partition_weights(T)
    worst = 0.0
    for v in (E1, E3, random_relevant_directions(surface, 1, cfg.seed)[0]):
        p = make_model_packet(T.locate(v), np.zeros(3), rho)
        ps = PacketSum.of([p])
        u = rng.uniform(-0.5, 0.5, size=(1000, 2))
        x = surface.chart(u)
        worst = max(worst, float(np.abs(square_function(ps, T, W, x) - np.abs(evaluate(p, x))).max()))
    return InvariantItem("square_function.persistence", worst <= 1e-10,
                         f"max |G phi - |phi|| over 3 x 1000 samples = {worst:.2e}")


def check_invariants(config: ExperimentConfig | None = None) -> InvariantSummary:
    """Exact invariant suites of all modules, one item each."""
    cfg = config or ExperimentConfig.default("tangent-packet")
    rng = np.random.default_rng(cfg.seed)
    items: list[InvariantItem] = []
    try:
        surface = cfg.surface()
    except TraceLabError as exc:
        items.append(InvariantItem("surface.construction", False, f"rejected: {exc}"))
        return InvariantSummary(tuple(items))
    except ValueError as exc:
        items.append(InvariantItem("surface.construction", False, f"rejected: {exc}"))
        return InvariantSummary(tuple(items))
    items.append(InvariantItem("surface.construction", True,
                               f"lambda = ({surface.lambda1}, {surface.lambda2})"))
    items += _surface_items(surface, rng)
    try:
        items += _frequency_items(cfg, rng)
    except TraceLabError as exc:
        items.append(InvariantItem("frequency.construction", False, str(exc)))
    items += _packet_items(cfg, surface, rng)
    worst, bad, n = multiplicity_audit(surface, cfg.rho[0], seed=cfg.seed)
    items.append(InvariantItem("estimators.multiplicity", worst <= 2 and bad == 0,
                               f"{n} fibers, max count {worst}, violations {bad}"))
    items.append(_persistence_item(cfg, surface, rng))
    return InvariantSummary(tuple(items))
