"""Zonal tiling of the frequency annulus and its plateau partition of unity.

The unit sphere is cut into an odd number of latitude bands of equal width
``h ~ sqrt(2/R)``; the two polar bands are single caps and every other band is
split into equal longitude cells. A box is the cone over one cell intersected
with the shell ``R - 1 <= |xi| <= R + 1``.

Each box carries normalized cell coordinates ``(t_lat, t_lon)`` that equal 1
on the cell boundary. The raw bump of a box is 1 where both coordinates are
at most ``plateau_fraction`` and vanishes once either exceeds 3/2; weights are
raw bumps divided by their pointwise sum, times a radial cutoff.
"""
from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass
from functools import cached_property
from enum import Enum

import numpy as np

from .exceptions import ConstructionError, ContractError
from .surface import QuadraticSurface, check_unit, smoothstep5

SUPPORT_DILATION = 1.5
RADIAL_PLATEAU = 0.75
OVERLAP_BOUND = 12
TAU0_DEFAULT = 0.3


class BoxClass(Enum):
    TRANSVERSAL = "transversal"
    NONTRANSVERSAL = "nontransversal"


def spherical_angles(xi):
    """Polar angle in ``[0, pi]`` and azimuth in ``[0, 2 pi)`` of nonzero vectors."""
    xi = np.asarray(xi, dtype=float)
    r = np.linalg.norm(xi, axis=-1)
    theta = np.arccos(np.clip(xi[..., 2] / r, -1.0, 1.0))
    phi = np.mod(np.arctan2(xi[..., 1], xi[..., 0]), 2 * np.pi)
    return theta, phi, r


def _direction(theta, phi):
    v = np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi),
                  math.cos(theta)])
    v[np.abs(v) < 1e-15] = 0.0
    return v / np.linalg.norm(v)


def _wrap(d):
    return np.mod(d + np.pi, 2 * np.pi) - np.pi


def _angle_between(theta1, phi1, theta2, phi2):
    c = (math.cos(theta1) * math.cos(theta2)
         + math.sin(theta1) * math.sin(theta2) * math.cos(phi1 - phi2))
    return math.acos(max(-1.0, min(1.0, c)))


@dataclass(frozen=True, eq=False)
class FrequencyBox:
    """One box of the tiling: a lat-lon cell (or polar cap) times the radial shell."""

    index: int
    R: float
    band: int
    cell: int
    theta_center: float
    phi_center: float
    theta_half: float
    phi_half: float
    polar: bool
    center_direction: np.ndarray
    tangent_frame: tuple[np.ndarray, np.ndarray]
    angular_radius: float
    plateau_fraction: float

    @property
    def radial_interval(self) -> tuple[float, float]:
        return (self.R - 1.0, self.R + 1.0)

    @property
    def rho(self) -> float:
        return self.R ** -0.5

    def cell_coordinates(self, theta, phi):
        """Normalized ``(t_lat, t_lon)``; both are at most 1 exactly on the cell."""
        if self.polar:
            d = theta if self.theta_center == 0.0 else np.pi - theta
            t1 = np.maximum(0.0, d - self.theta_half) / self.theta_half
            return t1, np.zeros_like(t1)
        t1 = np.abs(theta - self.theta_center) / self.theta_half
        t2 = np.abs(_wrap(phi - self.phi_center)) / self.phi_half
        return t1, t2

    def in_plateau(self, xi) -> np.ndarray:
        """Membership in the plateau subbox: cell coordinates <= plateau_fraction, radial plateau."""
        theta, phi, r = spherical_angles(xi)
        t1, t2 = self.cell_coordinates(theta, phi)
        p = self.plateau_fraction
        return (t1 <= p) & (t2 <= p) & (np.abs(r - self.R) <= RADIAL_PLATEAU)

    def plateau_center(self) -> np.ndarray:
        return self.R * self.center_direction

    def plateau_samples(self, n: int = 9) -> np.ndarray:
        """Grid of frequencies covering the plateau, its edges included."""
        p = self.plateau_fraction
        if self.polar:
            d = np.linspace(0.0, self.theta_half * (1 + p), n)
            phi = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
            d, phi = np.meshgrid(d, phi, indexing="ij")
            theta = d if self.theta_center == 0.0 else np.pi - d
        else:
            s = np.linspace(-p, p, n)
            theta, phi = np.meshgrid(self.theta_center + s * self.theta_half,
                                     self.phi_center + s * self.phi_half, indexing="ij")
        dirs = np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi),
                         np.cos(theta)], axis=-1).reshape(-1, 3)
        radii = self.R + np.array([-RADIAL_PLATEAU, 0.0, RADIAL_PLATEAU])
        return (radii[:, None, None] * dirs[None]).reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class AnnulusTiling:
    """Band layout of the tiling; boxes are materialized on demand."""

    R: float
    band_width: float
    band_cells: tuple[int, ...]
    band_offsets: tuple[int, ...]
    plateau_fraction: float
    overlap_bound: int = OVERLAP_BOUND

    def __len__(self) -> int:
        return self.band_offsets[-1] + self.band_cells[-1]

    @property
    def n_bands(self) -> int:
        return len(self.band_cells)

    def box(self, index: int) -> FrequencyBox:
        if not 0 <= index < len(self):
            raise IndexError(index)
        b = bisect.bisect_right(self.band_offsets, index) - 1
        return _make_box(self, b, index - self.band_offsets[b])

    def box_at(self, band: int, cell: int) -> FrequencyBox:
        return _make_box(self, band, cell % self.band_cells[band])

    @cached_property
    def boxes(self) -> tuple[FrequencyBox, ...]:
        return tuple(self.box(i) for i in range(len(self)))

    def __iter__(self):
        return (self.box(i) for i in range(len(self)))

    @cached_property
    def centers(self) -> np.ndarray:
        """Center directions of all boxes, in box order."""
        out = []
        for b, n in enumerate(self.band_cells):
            theta = self._band_theta(b)
            phi = 2 * np.pi * np.arange(n) / n
            out.append(np.column_stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi),
                                        np.full(n, np.cos(theta))]))
        c = np.concatenate(out)
        c[np.abs(c) < 1e-15] = 0.0
        return c / np.linalg.norm(c, axis=1, keepdims=True)

    @cached_property
    def radii(self) -> np.ndarray:
        return np.repeat([self._band_radius(b) for b in range(self.n_bands)], self.band_cells)

    def _band_theta(self, b: int) -> float:
        if b == 0:
            return 0.0
        if b == self.n_bands - 1:
            return math.pi
        return (b + 0.5) * self.band_width

    def _band_radius(self, b: int) -> float:
        h = self.band_width
        if b == 0 or b == self.n_bands - 1:
            return h
        theta_c = self._band_theta(b)
        dphi = 2 * math.pi / self.band_cells[b]
        return max(_angle_between(theta_c, 0.0, theta_c + s * 0.5 * h, 0.5 * dphi)
                   for s in (-1, 1))

    def locate(self, direction) -> FrequencyBox:
        """Box whose cell contains the given direction."""
        theta, phi, _ = spherical_angles(np.asarray(direction, float))
        b = min(self.n_bands - 1, int(theta // self.band_width))
        n = self.band_cells[b]
        k = 0 if n == 1 else int(np.floor(phi / (2 * np.pi / n) + 0.5)) % n
        return self.box_at(b, k)

    def nearest_center_distance(self, directions) -> np.ndarray:
        d = np.asarray(directions, float)
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        centers = self.centers
        best = np.full(len(d), -1.0)
        for start in range(0, len(centers), 512):
            best = np.maximum(best, (d @ centers[start:start + 512].T).max(axis=1))
        return np.arccos(np.clip(best, -1, 1))

    def to_csv(self, path, surface: QuadraticSurface | None = None,
               tau0: float = TAU0_DEFAULT) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["box_id", "v1", "v2", "v3", "angular_radius", "class"])
            for b in self:
                cls = "" if surface is None else classify_box(b, surface, tau0).value
                w.writerow([b.index, *(repr(float(c)) for c in b.center_direction),
                            repr(b.angular_radius), cls])


def _make_box(T: AnnulusTiling, b: int, k: int) -> FrequencyBox:
    h = T.band_width
    index = T.band_offsets[b] + k
    radius = T._band_radius(b)
    if b == 0 or b == T.n_bands - 1:
        sign = 1.0 if b == 0 else -1.0
        v = np.array([0.0, 0.0, sign])
        frame = (np.array([sign, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
        return FrequencyBox(index, T.R, b, 0, T._band_theta(b), 0.0, 0.5 * h, math.pi, True,
                            v, frame, radius, T.plateau_fraction)
    theta_c = T._band_theta(b)
    dphi = 2 * math.pi / T.band_cells[b]
    phi_c = k * dphi
    v = _direction(theta_c, phi_c)
    e_theta = np.array([math.cos(theta_c) * math.cos(phi_c),
                        math.cos(theta_c) * math.sin(phi_c), -math.sin(theta_c)])
    e_theta[np.abs(e_theta) < 1e-15] = 0.0
    e_theta -= (e_theta @ v) * v
    e_theta /= np.linalg.norm(e_theta)
    e_phi = np.cross(v, e_theta)
    return FrequencyBox(index, T.R, b, k, theta_c, phi_c, 0.5 * h, 0.5 * dphi, False, v,
                        (e_theta, e_phi), radius, T.plateau_fraction)


def tile_annulus(R: float, plateau_fraction: float = 0.5) -> AnnulusTiling:
    """Deterministic zonal tiling of the annulus of radius ``R`` (a power of 2, at least 4)."""
    if R < 4 or 2 ** round(math.log2(R)) != R:
        raise ContractError(f"R must be a power of 2 and at least 4, got {R}")
    if not 0.0 < plateau_fraction < 1.0:
        raise ContractError("plateau_fraction must lie in (0, 1)")
    target = math.sqrt(2.0 / R)
    n_bands = max(3, 2 * round((math.pi / target - 1) / 2) + 1)
    h = math.pi / n_bands
    cells = [1] + [max(3, round(2 * math.pi * math.sin((b + 0.5) * h) / h))
                   for b in range(1, n_bands - 1)] + [1]
    offsets = np.concatenate([[0], np.cumsum(cells)[:-1]]).tolist()
    return AnnulusTiling(float(R), h, tuple(cells), tuple(offsets), plateau_fraction)


def _raw_profile(t, p):
    return smoothstep5((SUPPORT_DILATION - t) / (SUPPORT_DILATION - p))


def radial_cutoff(r, R):
    """Smooth radial factor: 1 on ``|r - R| <= 3/4``, 0 for ``|r - R| >= 1``."""
    return smoothstep5((1.0 - np.abs(r - R)) / (1.0 - RADIAL_PLATEAU))


@dataclass(frozen=True, eq=False)
class PartitionWeight:
    """Normalized-bump partition of unity attached to a tiling.

    Only the boxes of the three bands around a point, and within each band
    the three cells nearest in longitude, can have a nonzero raw bump there.
    """

    tiling: AnnulusTiling

    def candidates(self, xi):
        """Candidate box ids ``(n, 9)`` (``-1`` for none) and their raw bumps."""
        xi = np.atleast_2d(np.asarray(xi, float))
        theta, phi, _ = spherical_angles(xi)
        T = self.tiling
        p = T.plateau_fraction
        n = len(xi)
        ids = np.full((n, 9), -1, dtype=np.int64)
        raw = np.zeros((n, 9))
        b0 = np.minimum(T.n_bands - 1, (theta // T.band_width).astype(int))
        cells = np.asarray(T.band_cells)
        offs = np.asarray(T.band_offsets)
        col = 0
        for db in (-1, 0, 1):
            b = b0 + db
            valid = (b >= 0) & (b < T.n_bands)
            bb = np.where(valid, b, 0)
            nphi = cells[bb]
            dphi = 2 * np.pi / nphi
            k0 = np.floor(phi / dphi + 0.5).astype(int)
            for dk in (-1, 0, 1):
                k = k0 + dk
                ok = valid & ((nphi > 1) | (dk == 0))
                kk = np.where(nphi > 1, np.mod(k, nphi), 0)
                box_id = offs[bb] + kk
                theta_c = (bb + 0.5) * T.band_width
                polar_n = bb == 0
                polar_s = bb == T.n_bands - 1
                half = 0.5 * T.band_width
                t1 = np.abs(theta - theta_c) / half
                t1 = np.where(polar_n, np.maximum(0.0, theta - half) / half, t1)
                t1 = np.where(polar_s, np.maximum(0.0, (np.pi - theta) - half) / half, t1)
                t2 = np.abs(_wrap(phi - kk * dphi)) / (0.5 * dphi)
                t2 = np.where(polar_n | polar_s, 0.0, t2)
                vals = _raw_profile(t1, p) * _raw_profile(t2, p)
                ids[:, col] = np.where(ok, box_id, -1)
                raw[:, col] = np.where(ok, vals, 0.0)
                col += 1
        return ids, raw

    def evaluate(self, xi):
        """Sparse weights: ``(ids, values)`` with values summing to the radial factor."""
        xi = np.atleast_2d(np.asarray(xi, float))
        ids, raw = self.candidates(xi)
        total = raw.sum(axis=1)
        if np.any(total <= 0):
            i = int(np.flatnonzero(total <= 0)[0])
            raise ConstructionError(f"raw partition sum vanishes at xi={tuple(xi[i])}")
        r = np.linalg.norm(xi, axis=1)
        vals = raw / total[:, None] * radial_cutoff(r, self.tiling.R)[:, None]
        return ids, vals

    def weight(self, box, xi):
        """``psi_box(xi)`` for an array of frequencies."""
        bid = box.index if isinstance(box, FrequencyBox) else int(box)
        ids, vals = self.evaluate(xi)
        return np.where(ids == bid, vals, 0.0).sum(axis=1)

    def total(self, xi):
        return self.evaluate(xi)[1].sum(axis=1)


def partition_weights(tiling: AnnulusTiling) -> PartitionWeight:
    """Partition of unity subordinate to the tiling's dilated cells."""
    return PartitionWeight(tiling)


def classify_box(box: FrequencyBox, surface: QuadraticSurface, tau0: float = TAU0_DEFAULT,
                 grid: int = 257) -> BoxClass:
    """Transversal iff ``|h_v| >= tau0`` on the support chart, checked conservatively.

    ``|h_v|`` is sampled on a vertex grid of ``chart_U0`` and the grid minimum is
    lowered by the Lipschitz bound of ``h_v`` times the covering radius of the grid.
    """
    if not 0.0 < tau0 < 1.0:
        raise ContractError("tau0 must lie in (0, 1)")
    return (BoxClass.TRANSVERSAL if transversality_margin(box.center_direction, surface, grid)
            >= tau0 else BoxClass.NONTRANSVERSAL)


def transversality_margin(v, surface: QuadraticSurface, grid: int = 257) -> float:
    """Certified lower bound of ``min |h_v|`` over ``chart_U0``."""
    v = check_unit(v)
    (a, b), (c, d) = surface.chart_U0
    u1, u2 = np.meshgrid(np.linspace(a, b, grid), np.linspace(c, d, grid), indexing="ij")
    vals = np.abs(surface.tangency_values(np.stack([u1, u2], axis=-1), v))
    cover = 0.5 * math.hypot((b - a) / (grid - 1), (d - c) / (grid - 1))
    return float(vals.min() - surface.tangency_lipschitz * cover)


def dual_direction(box: FrequencyBox) -> np.ndarray:
    """Long axis of the physical tubes dual to the box."""
    return box.center_direction.copy()
