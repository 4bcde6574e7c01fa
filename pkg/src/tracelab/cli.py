"""Command line entry point ``trace-lab``."""
from __future__ import annotations

import csv
import sys
from pathlib import Path

import click
import numpy as np

from .estimators import (degenerate_projection_sup, extreme_tube_mass, hyperbolic_generator_mass,
                         max_overlap, multiplicity_audit, packet_energy, pushforward_ball_mass,
                         schur_row_sum, strip_mass, sublevel_mass, tail_weighted_extreme_mass)
from .exceptions import TraceLabError
from .frequency import tile_annulus
from .lab import CSV_FIELDS, EXPERIMENTS, ExperimentConfig, check_invariants, refit_csv, \
    run_experiment
from .packets import Tube, build_tube_family, make_model_packet

ESTIMATORS = ("extreme-mass", "strip-mass", "tail-mass", "sublevel", "packet-energy", "schur",
              "pushforward", "projection-sup", "multiplicity", "overlap", "hyperbolic")


def _load(config, experiment, fallback="tangent-packet"):
    try:
        if config:
            return ExperimentConfig.from_toml(config, experiment, fallback=fallback)
        return ExperimentConfig.default(experiment or fallback)
    except (TraceLabError, OSError, ValueError) as exc:
        _fail(exc)


def _fail(exc):
    click.echo(f"error: {exc}", err=True)
    sys.exit(2)


def _direction(text: str) -> np.ndarray:
    named = {"e1": (1.0, 0.0, 0.0), "e2": (0.0, 1.0, 0.0), "e3": (0.0, 0.0, 1.0)}
    v = np.array(named[text] if text in named else [float(t) for t in text.split(",")])
    return v / np.linalg.norm(v)


@click.group()
@click.version_option(package_name="tracelab")
def main():
    """Scaling experiments for surface traces of angular square functions."""


@main.command()
@click.option("--experiment", "experiment", required=True, type=click.Choice(EXPERIMENTS))
@click.option("--config", type=click.Path(exists=True, dir_okay=False))
@click.option("--r-min", type=int)
@click.option("--r-max", type=int)
@click.option("--out", "out_dir", type=click.Path(file_okay=False))
def sweep(experiment, config, r_min, r_max, out_dir):
    """Run one dyadic sweep and write <id>.csv and <id>.json."""
    cfg = _load(config, experiment)
    try:
        cfg = cfg.with_R_range(r_min, r_max)
        report = run_experiment(cfg, out_dir=out_dir)
    except TraceLabError as exc:
        _fail(exc)
    for line in report.summary_lines():
        click.echo(line)
    sys.exit(0 if report.verdict else 1)


@main.command()
@click.option("--config", type=click.Path(exists=True, dir_okay=False))
def check(config):
    """Run the exact invariant suites."""
    cfg = _load(config, None)
    summary = check_invariants(cfg)
    for line in summary.lines():
        click.echo(line)
    sys.exit(0 if summary.passed else 1)


@main.command()
@click.argument("estimator", type=click.Choice(ESTIMATORS))
@click.option("--R", "R", type=int, required=True, help="Frequency scale (power of 2).")
@click.option("--direction", default="e1", show_default=True,
              help="e1, e2, e3 or comma-separated components.")
@click.option("--sigma", type=float, help="Sublevel scale (sublevel).")
@click.option("--N", "N", type=float, default=3.0, show_default=True, help="Tail exponent.")
@click.option("--r", "radius", type=float, help="Ball radius (pushforward, projection-sup).")
@click.option("--z", "center", default="0,0,0", show_default=True, help="Ball center.")
@click.option("--region", type=click.Choice(["all", "extreme", "outside_extreme"]), default="all",
              show_default=True)
@click.option("--pivot", default="0,0,0", show_default=True, help="Schur pivot m1,m2,j.")
@click.option("--k", "ks", default="0,1,2,3,4,5", show_default=True, help="Overlap dilations.")
@click.option("--cells", type=int, help="Cells per window axis.")
def estimate(estimator, R, direction, sigma, N, radius, center, region, pivot, ks, cells):
    """Run a single estimator at one scale and print CSV rows."""
    if R < 1 or R & (R - 1):
        raise click.BadParameter("R must be a power of 2", param_hint="--R")
    rho = R ** -0.5
    v = _direction(direction)
    cfg = ExperimentConfig.default("tangent-packet")
    surface = cfg.surface()
    kw = {"cells": cells} if cells else {}
    rows = []

    def emit(metric, value, unc=0.0):
        rows.append((f"estimate:{estimator}", R, repr(rho), metric, repr(float(value)),
                     repr(float(unc))))
    try:
        tube = Tube.through(np.zeros(3), v, rho)
        if estimator == "extreme-mass":
            m = extreme_tube_mass(surface, v, rho, tube, **kw)
            emit("extreme_mass", m.value, m.uncertainty)
        elif estimator == "strip-mass":
            m = strip_mass(surface, v, rho, **kw)
            emit("strip_mass", m.value, m.uncertainty)
        elif estimator == "tail-mass":
            m = tail_weighted_extreme_mass(surface, v, rho, tube, N, **kw)
            emit("tail_weighted_mass", m.value, m.uncertainty + m.tail_bound)
        elif estimator == "sublevel":
            if sigma is None:
                raise click.BadParameter("required", param_hint="--sigma")
            m = sublevel_mass(surface, v, rho, tube, sigma, **kw)
            emit(f"sublevel_mass:sigma={sigma!r}", m.value, m.uncertainty)
        elif estimator == "packet-energy":
            p = make_model_packet(tile_annulus(R).locate(v), np.zeros(3), rho)
            m = packet_energy(surface, p, region, **kw)
            emit(f"packet_energy:{region}", m.value, m.uncertainty + m.tail_bound)
        elif estimator == "schur":
            fam = build_tube_family(tile_annulus(R).locate(v), rho, 1.0)
            m1, m2, j = (int(t) for t in pivot.split(","))
            row = schur_row_sum(fam, fam.index_of(m1, m2, j), surface, v, rho, **kw)
            emit("row_sum", row.value)
            emit("tail_bound", row.tail_bound)
        elif estimator in ("pushforward", "projection-sup"):
            if radius is None:
                raise click.BadParameter("required", param_hint="--r")
            if estimator == "pushforward":
                z = np.array([float(t) for t in center.split(",")])
                reg = "all" if region == "all" else ("outside_extreme", rho)
                m = pushforward_ball_mass(surface, v, z, radius, reg, **kw)
                emit(f"ball_mass:r={radius!r}", m.value, m.uncertainty)
            else:
                s = degenerate_projection_sup(surface, v, rho, radius, **kw)
                emit("sup_ratio", s.value, s.mass.uncertainty / radius**2)
        elif estimator == "multiplicity":
            worst, bad, n = multiplicity_audit(surface, rho)
            emit("max_multiplicity", worst)
            emit("violations", bad)
            emit("fibers", n)
        elif estimator == "overlap":
            fam = build_tube_family(tile_annulus(R).locate(v), rho, 1.0)
            for k, c in max_overlap(fam, [int(t) for t in ks.split(",")]).items():
                emit(f"max_overlap:dilation={float(2**k)!r}", c)
        elif estimator == "hyperbolic":
            m = hyperbolic_generator_mass(rho, **kw)
            emit("generator_mass", m.value, m.uncertainty)
    except TraceLabError as exc:
        _fail(exc)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    w.writerows(rows)


@main.command()
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False))
def report(in_dir):
    """Re-fit every CSV in a directory and print the verdicts."""
    paths = sorted(Path(in_dir).glob("*.csv"))
    if not paths:
        click.echo(f"no CSV files in {in_dir}", err=True)
        sys.exit(1)
    ok = True
    for p in paths:
        try:
            rep = refit_csv(p)
        except (TraceLabError, ValueError, KeyError) as exc:
            _fail(f"{p}: {exc}")
        for line in rep.summary_lines():
            click.echo(line)
        ok &= rep.verdict
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
