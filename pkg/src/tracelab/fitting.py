"""Ordinary least squares on dyadic logarithms."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import FitError


@dataclass(frozen=True)
class LogLogFit:
    slope: float
    intercept: float
    stderr: float
    residual: float


def fit_loglog(points: Sequence[tuple[float, float]]) -> LogLogFit:
    """Fit ``log2(value) = slope * log2(scale) + intercept``.

    ``residual`` is the root-mean-square residual in log2 units and
    ``stderr`` the usual standard error of the slope (0 for exact data or
    when only two points are given).

    Raises
    ------
    FitError
        Fewer than 4 points, or a nonpositive scale or value.
    """
    pts = list(points)
    if len(pts) < 4:
        raise FitError(f"need at least 4 points, got {len(pts)}")
    for i, (s, v) in enumerate(pts):
        if not (s > 0 and math.isfinite(s)):
            raise FitError(f"row {i}: nonpositive scale {s!r}")
        if not (v > 0 and math.isfinite(v)):
            raise FitError(f"row {i}: nonpositive value {v!r} at scale {s!r}")
    x = np.log2([p[0] for p in pts])
    y = np.log2([p[1] for p in pts])
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx == 0:
        raise FitError("all scales are equal")
    slope = float(((x - xm) * (y - ym)).sum() / sxx)
    intercept = float(ym - slope * xm)
    res = y - (slope * x + intercept)
    n = len(x)
    stderr = math.sqrt(float((res**2).sum()) / (n - 2) / sxx) if n > 2 else 0.0
    return LogLogFit(slope, intercept, stderr, math.sqrt(float((res**2).mean())))


@dataclass(frozen=True)
class GrowthFit:
    """Power-law growth of a mass against a scale."""

    scales: tuple[float, ...]
    masses: tuple[float, ...]
    exponent: float
    residual: float
    stderr: float

    @property
    def scale_range(self) -> tuple[float, float]:
        return (min(self.scales), max(self.scales))

    @property
    def octaves(self) -> float:
        lo, hi = self.scale_range
        return math.log2(hi / lo)


def growth_fit(scales, masses) -> GrowthFit:
    scales, masses = tuple(map(float, scales)), tuple(map(float, masses))
    fit = fit_loglog(list(zip(scales, masses)))
    g = GrowthFit(scales, masses, fit.slope, fit.residual, fit.stderr)
    if g.octaves < 2:
        raise FitError(f"scales span {g.octaves:.2f} octaves, need at least 2")
    return g
