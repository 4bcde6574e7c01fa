from __future__ import annotations

import math

import numpy as np
import pytest

from tracelab.exceptions import FitError
from tracelab.fitting import fit_loglog, growth_fit

SCALES = [2.0**k for k in range(8, 17, 2)]


def test_exact_power_law():
    fit = fit_loglog([(x, 3 * x**0.125) for x in SCALES])
    assert fit.slope == pytest.approx(0.125, abs=1e-14)
    assert fit.intercept == pytest.approx(math.log2(3), abs=1e-12)
    assert fit.residual == pytest.approx(0.0, abs=1e-14)
    assert fit.stderr == pytest.approx(0.0, abs=1e-14)


def test_constant_data():
    fit = fit_loglog([(x, 7.0) for x in SCALES])
    assert fit.slope == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("k", range(5))
def test_single_perturbation_shift(k):
    xs = [2.0**j for j in range(5)]
    base = fit_loglog([(x, x**1.5) for x in xs]).slope
    ys = [x**1.5 for x in xs]
    ys[k] *= 1.01
    shifted = fit_loglog(list(zip(xs, ys))).slope
    # OLS is linear in log2(y): the shift is log2(1.01) (x_k - mean) / Sxx with x = 0..4
    expected = math.log2(1.01) * (k - 2) / 10
    assert shifted - base == pytest.approx(expected, abs=1e-13)
    assert abs(shifted - base) < 0.01


def test_stderr_matches_numpy():
    rng = np.random.default_rng(0)
    xs = np.array(SCALES)
    ys = xs**0.5 * np.exp(rng.normal(scale=0.05, size=len(xs)))
    fit = fit_loglog(list(zip(xs, ys)))
    coef, cov = np.polyfit(np.log2(xs), np.log2(ys), 1, cov="unscaled")
    res = np.log2(ys) - np.polyval(coef, np.log2(xs))
    assert fit.slope == pytest.approx(coef[0], rel=1e-12)
    assert fit.stderr == pytest.approx(math.sqrt(cov[0, 0] * (res**2).sum() / 3), rel=1e-10)
    assert fit.residual == pytest.approx(math.sqrt((res**2).mean()), rel=1e-10)


def test_fit_errors():
    with pytest.raises(FitError, match="at least 4"):
        fit_loglog([(1, 1), (2, 2), (4, 4)])
    with pytest.raises(FitError, match="row 2"):
        fit_loglog([(1, 1), (2, 2), (4, 0.0), (8, 8)])
    with pytest.raises(FitError, match="row 0"):
        fit_loglog([(-1, 1), (2, 2), (4, 4), (8, 8)])
    with pytest.raises(FitError, match="equal"):
        fit_loglog([(2, 1), (2, 2), (2, 4), (2, 8)])


def test_growth_fit_octaves():
    g = growth_fit([1, 2, 4, 8], [1, 4, 16, 64])
    assert g.exponent == pytest.approx(2.0)
    assert g.octaves == 3
    with pytest.raises(FitError, match="octaves"):
        growth_fit([1, 1.2, 1.5, 1.9], [1, 2, 3, 4])
