from __future__ import annotations

import csv
import io

import pytest
from click.testing import CliRunner

from tracelab.cli import main
from tracelab.lab import CSV_FIELDS


@pytest.fixture
def runner():
    return CliRunner()


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_sweep_then_report(runner, tmp_path):
    out = tmp_path / "out"
    res = runner.invoke(main, ["sweep", "--experiment", "multiplicity", "--r-min", "256",
                               "--r-max", "1024", "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert "verdict PASS" in res.output
    assert (out / "multiplicity.csv").exists() and (out / "multiplicity.json").exists()
    rep = runner.invoke(main, ["report", "--in", str(out)])
    assert rep.exit_code == 0
    assert "verdict PASS" in rep.output


def test_sweep_failing_verdict_exits_nonzero(runner, tmp_path):
    # two scales cannot be fitted, so the verdict fails
    res = runner.invoke(main, ["sweep", "--experiment", "tangent-packet", "--r-min", "256",
                               "--r-max", "1024", "--out", str(tmp_path)])
    assert res.exit_code == 1
    assert "verdict FAIL" in res.output


def test_sweep_with_config(runner, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[experiment]\nR = [256, 4096]\n[params]\nfibers = 400\n')
    res = runner.invoke(main, ["sweep", "--experiment", "multiplicity", "--config", str(cfg),
                               "--out", str(tmp_path / "o")])
    assert res.exit_code == 0, res.output
    rows = _rows((tmp_path / "o" / "multiplicity.csv").read_text())
    assert sorted({int(r["R"]) for r in rows}) == [256, 4096]


def test_bad_config_reports_error(runner, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[experiment]\nR = [256, 1000]\n')
    res = runner.invoke(main, ["sweep", "--experiment", "multiplicity", "--config", str(cfg)])
    assert res.exit_code == 2
    assert "powers of 2" in res.output


def test_check_command(runner, tmp_path):
    res = runner.invoke(main, ["check"])
    assert res.exit_code == 0, res.output
    assert "PASS square_function.persistence" in res.output
    bad = tmp_path / "bad.toml"
    bad.write_text("[surface]\nlambda1 = 1.0\nlambda2 = -1.0\n")
    res = runner.invoke(main, ["check", "--config", str(bad)])
    assert res.exit_code == 1
    assert "FAIL surface.construction" in res.output


def test_estimate_extreme_mass(runner):
    res = runner.invoke(main, ["estimate", "extreme-mass", "--R", "1024", "--cells", "256"])
    assert res.exit_code == 0, res.output
    rows = _rows(res.output)
    assert list(rows[0]) == list(CSV_FIELDS)
    assert rows[0]["experiment"] == "estimate:extreme-mass"
    assert float(rows[0]["rho"]) == 1 / 32 and float(rows[0]["value"]) > 0


def test_estimate_pushforward_and_overlap(runner):
    res = runner.invoke(main, ["estimate", "pushforward", "--R", "256", "--direction", "e3",
                               "--r", "0.1"])
    assert res.exit_code == 0, res.output
    assert _rows(res.output)[0]["metric"] == "ball_mass:r=0.1"
    res = runner.invoke(main, ["estimate", "overlap", "--R", "256", "--k", "0,1"])
    assert res.exit_code == 0, res.output
    assert len(_rows(res.output)) == 2


def test_estimate_argument_errors(runner):
    res = runner.invoke(main, ["estimate", "extreme-mass", "--R", "1000"])
    assert res.exit_code == 2
    res = runner.invoke(main, ["estimate", "sublevel", "--R", "256"])
    assert res.exit_code == 2
    # rho = 1/2 is outside the estimator's range: reported, no traceback
    res = runner.invoke(main, ["estimate", "extreme-mass", "--R", "4"])
    assert res.exit_code == 2 and "error:" in res.output


def test_report_empty_dir(runner, tmp_path):
    res = runner.invoke(main, ["report", "--in", str(tmp_path)])
    assert res.exit_code == 1
