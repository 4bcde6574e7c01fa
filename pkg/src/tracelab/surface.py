"""Elliptic quadratic patch, its weighted surface measure and parameter-space quadrature.

The patch is the graph ``X(u) = (u1, u2, Q(u))`` with
``Q(u) = (lambda1 * u1**2 + lambda2 * u2**2) / 2`` over a rectangular chart.
Every geometric field used elsewhere in the package (unit normal, tangency
function, extreme strip, tangency line) is computed here from closed forms.

Quadrature rules are exact rectangle partitions of the support chart ``U0``
with one midpoint node per rectangle; fine resolution is confined to a few
anisotropic refinement windows.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .exceptions import ContractError, DomainError, EvaluationError, ResourceError

Rect = tuple[tuple[float, float], tuple[float, float]]

UNIT_TOL = 1e-12
DEFAULT_NODE_BUDGET = 4_000_000


def smoothstep5(t):
    """Clamped quintic smoothstep ``6t^5 - 15t^4 + 10t^3`` (C2, symmetric about 1/2)."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def check_unit(v, name="v") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ContractError(f"{name} must be a 3-vector, got shape {v.shape}")
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise ContractError(f"{name} must be a unit vector (|{name}| = {np.linalg.norm(v)!r})")
    return v


def _rect(r) -> Rect:
    (a, b), (c, d) = r
    return (float(a), float(b)), (float(c), float(d))


@dataclass(frozen=True)
class QuadraticSurface:
    """Quadratic graph patch with a smooth plateau density.

    Parameters
    ----------
    lambda1, lambda2 : float
        Principal coefficients. Their product must be positive unless
        ``contrast`` is set.
    chart_U : rectangle
        Parameter chart ``((u1_lo, u1_hi), (u2_lo, u2_hi))``.
    chart_U0 : rectangle
        Support chart, strictly inside ``chart_U``. The density vanishes
        outside it.
    plateau_fraction : float
        The density equals 1 on the concentric sub-rectangle of ``chart_U0``
        scaled by this fraction and decays with a quintic smoothstep to 0 at
        the boundary of ``chart_U0``.
    base_point : pair
        Declared tangency base point; must lie in the density plateau.
    contrast : bool
        Admit the hyperbolic sign (contrast experiments only).
    """

    lambda1: float = 1.0
    lambda2: float = 1.0
    chart_U: Rect = ((-1.0, 1.0), (-1.0, 1.0))
    chart_U0: Rect = ((-0.5, 0.5), (-0.5, 0.5))
    plateau_fraction: float = 0.8
    base_point: tuple[float, float] = (0.0, 0.0)
    contrast: bool = False

    def __post_init__(self):
        object.__setattr__(self, "chart_U", _rect(self.chart_U))
        object.__setattr__(self, "chart_U0", _rect(self.chart_U0))
        l1, l2 = float(self.lambda1), float(self.lambda2)
        if l1 == 0.0 or l2 == 0.0:
            raise ContractError("principal coefficients must be nonzero")
        if l1 * l2 < 0 and not self.contrast:
            raise ContractError(
                "hyperbolic patch (lambda1*lambda2 < 0) requires contrast=True")
        for (a, b), (A, B) in zip(self.chart_U0, self.chart_U):
            if not (A < a < b < B):
                raise ContractError("chart_U0 must lie strictly inside chart_U")
        if not 0.0 < self.plateau_fraction < 1.0:
            raise ContractError("plateau_fraction must lie in (0, 1)")
        if self.density(np.asarray(self.base_point, float)) < 1.0:
            raise ContractError("base_point must lie in the density plateau")

    # -- scalar data ---------------------------------------------------
    @property
    def elliptic(self) -> bool:
        return self.lambda1 * self.lambda2 > 0

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([self.lambda1, self.lambda2])

    @property
    def lambda_max(self) -> float:
        return float(max(abs(self.lambda1), abs(self.lambda2)))

    @cached_property
    def max_area_weight(self) -> float:
        """Largest surface Jacobian on ``chart_U0`` (attained at a corner)."""
        (a, b), (c, d) = self.chart_U0
        u1, u2 = max(abs(a), abs(b)), max(abs(c), abs(d))
        return float(np.sqrt(1 + (self.lambda1 * u1) ** 2 + (self.lambda2 * u2) ** 2))

    @property
    def chart_lipschitz(self) -> float:
        """Lipschitz bound of ``X`` on ``chart_U0``."""
        return self.max_area_weight

    @property
    def tangency_lipschitz(self) -> float:
        """Lipschitz bound of ``u -> n_Q(X(u)) . v`` for unit ``v``."""
        return 2.0 * self.lambda_max

    # -- pointwise fields (vectorized over leading axes) ------------------
    def height(self, u):
        u = np.asarray(u, dtype=float)
        return 0.5 * (self.lambda1 * u[..., 0] ** 2 + self.lambda2 * u[..., 1] ** 2)

    def chart(self, u):
        u = np.asarray(u, dtype=float)
        return np.concatenate([u, self.height(u)[..., None]], axis=-1)

    def area_weight(self, u):
        u = np.asarray(u, dtype=float)
        return np.sqrt(1.0 + (self.lambda1 * u[..., 0]) ** 2 + (self.lambda2 * u[..., 1]) ** 2)

    def normal(self, u):
        u = np.asarray(u, dtype=float)
        raw = np.stack([-self.lambda1 * u[..., 0], -self.lambda2 * u[..., 1],
                        np.ones(u.shape[:-1])], axis=-1)
        return raw / self.area_weight(u)[..., None]

    def density(self, u):
        u = np.asarray(u, dtype=float)
        out = np.ones(u.shape[:-1])
        p = self.plateau_fraction
        for axis, (a, b) in enumerate(self.chart_U0):
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            t = (half - np.abs(u[..., axis] - mid)) / ((1.0 - p) * half)
            out = out * smoothstep5(t)
        return out

    def tangency_numerator(self, u, v):
        u = np.asarray(u, dtype=float)
        return -self.lambda1 * v[0] * u[..., 0] - self.lambda2 * v[1] * u[..., 1] + v[2]

    def tangency_values(self, u, v):
        """``h_v(u) = n_Q(X(u)) . v`` without argument checks."""
        return self.tangency_numerator(u, v) / self.area_weight(u)

    def in_chart(self, u, chart: Rect | None = None):
        u = np.asarray(u, dtype=float)
        (a, b), (c, d) = chart or self.chart_U
        return (u[..., 0] >= a) & (u[..., 0] <= b) & (u[..., 1] >= c) & (u[..., 1] <= d)


@dataclass(frozen=True)
class SurfacePoint:
    u: tuple[float, float]
    x: np.ndarray
    normal: np.ndarray
    area_weight: float
    density: float


def chart_map(surface: QuadraticSurface, u) -> SurfacePoint:
    """Evaluate the chart and its pointwise fields at one parameter point."""
    u = np.asarray(u, dtype=float)
    if u.shape != (2,):
        raise ContractError("u must be a parameter pair")
    if not surface.in_chart(u):
        raise DomainError(f"u={tuple(u)} lies outside chart_U={surface.chart_U}")
    return SurfacePoint(u=(float(u[0]), float(u[1])), x=surface.chart(u),
                        normal=surface.normal(u), area_weight=float(surface.area_weight(u)),
                        density=float(surface.density(u)))


def tangency(surface: QuadraticSurface, u, v):
    """Tangency function ``h_v(u) = n_Q(X(u)) . v`` (vectorized over ``u``)."""
    v = check_unit(v)
    val = surface.tangency_values(u, v)
    return float(val) if np.ndim(val) == 0 else val


def extreme_strip_member(surface: QuadraticSurface, u, v, rho):
    """True where ``|h_v(u)| <= rho**0.5``."""
    if not 0.0 < rho <= 1.0:
        raise ContractError("rho must lie in (0, 1]")
    val = np.abs(tangency(surface, u, v)) <= math.sqrt(rho)
    return bool(val) if np.ndim(val) == 0 else val


@dataclass(frozen=True)
class TangencyLine:
    """Segment of the affine line ``coefficients . u = offset`` inside ``chart_U0``."""

    coefficients: tuple[float, float]
    offset: float
    start: np.ndarray
    end: np.ndarray

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    @property
    def tangent(self) -> np.ndarray:
        d = self.end - self.start
        n = np.linalg.norm(d)
        if n == 0:
            a = np.array(self.coefficients)
            return np.array([-a[1], a[0]]) / np.linalg.norm(a)
        return d / n

    def points(self, n: int) -> np.ndarray:
        t = (np.arange(n) + 0.5) / n
        return self.start + t[:, None] * (self.end - self.start)


def tangency_line(surface: QuadraticSurface, v) -> TangencyLine | None:
    """Zero set of ``h_v`` clipped to ``chart_U0``; ``None`` when ``v`` is not relevant."""
    v = check_unit(v)
    a = np.array([surface.lambda1 * v[0], surface.lambda2 * v[1]])
    c = float(v[2])
    na = np.linalg.norm(a)
    if na == 0.0:
        return None
    p0 = a * c / na**2
    d = np.array([-a[1], a[0]]) / na
    lo, hi = -np.inf, np.inf
    for axis, (lo_b, hi_b) in enumerate(surface.chart_U0):
        if abs(d[axis]) < 1e-300:
            if not lo_b <= p0[axis] <= hi_b:
                return None
            continue
        t1, t2 = (lo_b - p0[axis]) / d[axis], (hi_b - p0[axis]) / d[axis]
        lo, hi = max(lo, min(t1, t2)), min(hi, max(t1, t2))
    if lo > hi:
        return None
    start, end = p0 + lo * d, p0 + hi * d
    # a.u = c exactly along the segment; re-project to remove rounding drift
    start = start - (a @ start - c) * a / na**2
    end = end - (a @ end - c) * a / na**2
    return TangencyLine((float(a[0]), float(a[1])), c, start, end)


# ---------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class RefinementWindow:
    """Parameter rectangle integrated with cells of size ``(h1, h2)``."""

    u1: tuple[float, float]
    u2: tuple[float, float]
    h1: float
    h2: float

    def overlaps(self, other: "RefinementWindow") -> bool:
        return (self.u1[0] < other.u1[1] and other.u1[0] < self.u1[1]
                and self.u2[0] < other.u2[1] and other.u2[0] < self.u2[1])

    def merge(self, other: "RefinementWindow") -> "RefinementWindow":
        return RefinementWindow((min(self.u1[0], other.u1[0]), max(self.u1[1], other.u1[1])),
                                (min(self.u2[0], other.u2[0]), max(self.u2[1], other.u2[1])),
                                min(self.h1, other.h1), min(self.h2, other.h2))

    @property
    def shape(self) -> tuple[int, int]:
        return (max(1, math.ceil((self.u1[1] - self.u1[0]) / self.h1 - 1e-9)),
                max(1, math.ceil((self.u2[1] - self.u2[0]) / self.h2 - 1e-9)))


def merge_windows(windows: Sequence[RefinementWindow]) -> list[RefinementWindow]:
    """Replace overlapping windows by their bounding box until none overlap."""
    out = list(windows)
    changed = True
    while changed:
        changed = False
        for i in range(len(out)):
            for j in range(i + 1, len(out)):
                if out[i].overlaps(out[j]):
                    out[i] = out[i].merge(out.pop(j))
                    changed = True
                    break
            if changed:
                break
    return sorted(out, key=lambda w: (w.u1, w.u2))


@dataclass(frozen=True, eq=False)
class SurfaceQuadrature:
    """Midpoint rule on an exact rectangle partition of ``chart_U0``.

    Node arrays are stored column-wise; ``weights`` already include the
    cell area, the surface Jacobian and the density. Nodes where the
    density vanishes are dropped.
    """

    surface: QuadraticSurface
    u: np.ndarray
    cell_area: np.ndarray
    windows: tuple[RefinementWindow, ...] = ()
    base_resolution: int = 0

    def __len__(self) -> int:
        return len(self.u)

    @cached_property
    def x(self) -> np.ndarray:
        return self.surface.chart(self.u)

    @cached_property
    def normal(self) -> np.ndarray:
        return self.surface.normal(self.u)

    @cached_property
    def area_weight(self) -> np.ndarray:
        return self.surface.area_weight(self.u)

    @cached_property
    def density(self) -> np.ndarray:
        return self.surface.density(self.u)

    @cached_property
    def weights(self) -> np.ndarray:
        return self.cell_area * self.area_weight * self.density

    @property
    def refinement_descriptor(self) -> dict:
        return {"base_resolution": self.base_resolution,
                "windows": [dict(u1=w.u1, u2=w.u2, h1=w.h1, h2=w.h2, shape=w.shape)
                            for w in self.windows]}

    def node(self, i: int) -> SurfacePoint:
        return SurfacePoint(u=(float(self.u[i, 0]), float(self.u[i, 1])), x=self.x[i],
                            normal=self.normal[i], area_weight=float(self.area_weight[i]),
                            density=float(self.density[i]))

    def subset(self, index) -> "SurfaceQuadrature":
        return SurfaceQuadrature(self.surface, self.u[index], self.cell_area[index],
                                 self.windows, self.base_resolution)

    def total_mass(self) -> float:
        return math.fsum(self.weights)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["u1", "u2", "x1", "x2", "x3", "weight"])
            for row in np.column_stack([self.u, self.x, self.weights]):
                w.writerow([repr(float(t)) for t in row])


def _split_outside(rects: np.ndarray, win: RefinementWindow) -> np.ndarray:
    """Remove ``win`` from each rectangle ``[lo1, hi1, lo2, hi2]``, returning the remainder."""
    a, b = win.u1
    c, d = win.u2
    lo1, hi1, lo2, hi2 = rects.T
    hit = (lo1 < b) & (a < hi1) & (lo2 < d) & (c < hi2)
    keep = rects[~hit]
    r = rects[hit]
    if len(r) == 0:
        return keep
    lo1, hi1, lo2, hi2 = r.T
    clo1, chi1 = np.maximum(lo1, a), np.minimum(hi1, b)
    pieces = [
        np.column_stack([lo1, clo1, lo2, hi2]),            # left of window
        np.column_stack([chi1, hi1, lo2, hi2]),            # right of window
        np.column_stack([clo1, chi1, lo2, np.maximum(lo2, c)]),   # below
        np.column_stack([clo1, chi1, np.minimum(hi2, d), hi2]),   # above
    ]
    parts = np.concatenate(pieces)
    parts = parts[(parts[:, 1] > parts[:, 0]) & (parts[:, 3] > parts[:, 2])]
    return np.concatenate([keep, parts])


def build_quadrature(surface: QuadraticSurface, base_resolution: int = 64,
                     refinement_windows: Sequence[RefinementWindow] = (), *,
                     node_budget: int = DEFAULT_NODE_BUDGET,
                     windows_only: bool = False) -> SurfaceQuadrature:
    """Tensor midpoint rule on ``chart_U0`` with anisotropic refinement windows.

    Base cells overlapping a window are cut along the window boundary, so the
    cells always partition ``chart_U0`` exactly. With ``windows_only`` the
    base grid is skipped and only the windows are integrated; callers use this
    when the integrand is known to vanish (or is bounded separately) outside.
    """
    if not windows_only and base_resolution < 16:
        raise ContractError("base_resolution must be at least 16 per axis")
    (A, B), (C, D) = surface.chart_U0
    tol = 1e-12
    for w in refinement_windows:
        if w.h1 <= 0 or w.h2 <= 0:
            raise ContractError("window cell sizes must be positive")
        if w.u1[0] < A - tol or w.u1[1] > B + tol or w.u2[0] < C - tol or w.u2[1] > D + tol:
            raise DomainError(f"refinement window {w} is not inside chart_U0")
    windows = merge_windows(refinement_windows)
    n_win = sum(w.shape[0] * w.shape[1] for w in windows)
    n_base = 0 if windows_only else base_resolution**2 + 4 * base_resolution * len(windows)
    if n_win + n_base > node_budget:
        raise ResourceError(f"quadrature needs {n_win + n_base} nodes, budget is {node_budget}")

    blocks = []
    if not windows_only:
        e1 = np.linspace(A, B, base_resolution + 1)
        e2 = np.linspace(C, D, base_resolution + 1)
        L1, L2 = np.meshgrid(e1[:-1], e2[:-1], indexing="ij")
        H1, H2 = np.meshgrid(e1[1:], e2[1:], indexing="ij")
        rects = np.column_stack([L1.ravel(), H1.ravel(), L2.ravel(), H2.ravel()])
        for w in windows:
            rects = _split_outside(rects, w)
        blocks.append(rects)
    for w in windows:
        n1, n2 = w.shape
        e1 = np.linspace(w.u1[0], w.u1[1], n1 + 1)
        e2 = np.linspace(w.u2[0], w.u2[1], n2 + 1)
        L1, L2 = np.meshgrid(e1[:-1], e2[:-1], indexing="ij")
        H1, H2 = np.meshgrid(e1[1:], e2[1:], indexing="ij")
        blocks.append(np.column_stack([L1.ravel(), H1.ravel(), L2.ravel(), H2.ravel()]))
    rects = np.concatenate(blocks) if blocks else np.zeros((0, 4))
    u = np.column_stack([0.5 * (rects[:, 0] + rects[:, 1]), 0.5 * (rects[:, 2] + rects[:, 3])])
    area = (rects[:, 1] - rects[:, 0]) * (rects[:, 3] - rects[:, 2])
    keep = surface.density(u) > 0
    return SurfaceQuadrature(surface, u[keep], area[keep], tuple(windows),
                             0 if windows_only else base_resolution)


def integrate(quadrature: SurfaceQuadrature, g: Callable[[SurfaceQuadrature], np.ndarray],
              chunk_size: int | None = None):
    """Compensated sum of ``weights * g`` over all nodes.

    ``g`` receives a (sub-)quadrature and returns one value per node. It is
    evaluated chunk by chunk when ``chunk_size`` is given; the final
    reduction is a single correctly rounded ``math.fsum`` over all products,
    so the result does not depend on the chunking.
    """
    n = len(quadrature)
    step = n if not chunk_size else int(chunk_size)
    parts = []
    for start in range(0, n, max(step, 1)):
        sub = quadrature if step >= n else quadrature.subset(slice(start, start + step))
        vals = np.asarray(g(sub))
        if vals.shape != (len(sub),):
            raise EvaluationError(f"g returned shape {vals.shape}, expected ({len(sub)},)")
        bad = ~np.isfinite(vals)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise EvaluationError(
                f"non-finite integrand at node {start + i} (u={tuple(sub.u[i])})")
        parts.append(sub.weights * vals)
    if not parts:
        return 0.0
    prod = np.concatenate(parts)
    if np.iscomplexobj(prod):
        return complex(math.fsum(prod.real), math.fsum(prod.imag))
    return math.fsum(prod)


# ---------------------------------------------------------------------
# Conservative window location
# ---------------------------------------------------------------------

def locate_windows(surface: QuadraticSurface,
                   may_intersect: Callable[[np.ndarray, float], np.ndarray],
                   cell: float, *, coarse: float = 1 / 32, pad: int = 1,
                   tile: float | None = None,
                   max_cells: int = 2_000_000) -> list[tuple[tuple[float, float], tuple[float, float]]]:
    """Find rectangles of ``chart_U0`` covering a set described by a conservative predicate.

    ``may_intersect(centers, half_diagonal)`` must return True for every cell
    (given by its center and half-diagonal) that can contain a point of the
    set. Cells are refined by bisection until their side is below ``cell``;
    the surviving cells are grouped into 8-connected components and each
    component's bounding box (padded by ``pad`` cells) is returned.

    With ``tile`` set, components are additionally cut along a grid of that
    spacing and no padding is applied, so that long oblique sets yield many
    small disjoint boxes instead of one large one.
    """
    (A, B), (C, D) = surface.chart_U0
    n1 = max(1, math.ceil((B - A) / coarse))
    n2 = max(1, math.ceil((D - C) / coarse))
    h1, h2 = (B - A) / n1, (D - C) / n2
    I, J = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    I, J = I.ravel(), J.ravel()
    while True:
        centers = np.column_stack([A + (I + 0.5) * h1, C + (J + 0.5) * h2])
        keep = np.asarray(may_intersect(centers, 0.5 * math.hypot(h1, h2)), dtype=bool)
        I, J = I[keep], J[keep]
        if len(I) == 0:
            return []
        if max(h1, h2) <= cell:
            break
        if 4 * len(I) > max_cells:
            raise ResourceError(f"window search exceeded {max_cells} cells")
        I = np.concatenate([2 * I, 2 * I + 1, 2 * I, 2 * I + 1])
        J = np.concatenate([2 * J, 2 * J, 2 * J + 1, 2 * J + 1])
        h1, h2 = h1 / 2, h2 / 2
    order = np.lexsort((J, I))
    I, J = I[order], J[order]
    m = int(J.max()) + 3
    keys = I * m + J
    rows, cols = [], []
    for di, dj in ((0, 1), (1, -1), (1, 0), (1, 1)):
        nb = (I + di) * m + (J + dj)
        pos = np.searchsorted(keys, nb)
        ok = pos < len(keys)
        ok[ok] = keys[pos[ok]] == nb[ok]
        rows.append(np.flatnonzero(ok))
        cols.append(pos[ok])
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(keys), len(keys)))
    ncomp, labels = connected_components(graph, directed=False)
    if tile is not None:
        per1 = max(1, round(tile / h1))
        per2 = max(1, round(tile / h2))
        ntile2 = int(J.max()) // per2 + 1
        tile_id = (I // per1) * ntile2 + J // per2
        _, labels = np.unique(labels.astype(np.int64) * (int(tile_id.max()) + 1) + tile_id,
                              return_inverse=True)
        ncomp = int(labels.max()) + 1
        pad = 0
    boxes = []
    for k in range(ncomp):
        sel = labels == k
        i0, i1 = I[sel].min() - pad, I[sel].max() + 1 + pad
        j0, j1 = J[sel].min() - pad, J[sel].max() + 1 + pad
        boxes.append(((max(A, A + i0 * h1), min(B, A + i1 * h1)),
                      (max(C, C + j0 * h2), min(D, C + j1 * h2))))
    return sorted(boxes)


def window_quadrature(surface: QuadraticSurface,
                      may_intersect: Callable[[np.ndarray, float], np.ndarray],
                      detect_cell: float, cells_per_axis: int = 256, *,
                      node_budget: int = DEFAULT_NODE_BUDGET,
                      require_interior: bool = False,
                      tile: float | None = None) -> SurfaceQuadrature:
    """Windows-only quadrature over the region flagged by ``may_intersect``.

    Each located window gets ``cells_per_axis`` cells along each axis, which
    makes the resolution follow the window's own aspect ratio. With ``tile``
    the cell size is instead the overall extent of all windows divided by
    ``cells_per_axis``. With
    ``require_interior`` a window touching the boundary of ``chart_U0``
    raises :class:`DomainError`.
    """
    boxes = locate_windows(surface, may_intersect, detect_cell, tile=tile)
    (A, B), (C, D) = surface.chart_U0
    if tile is not None and boxes:
        # tiles of one set share the cell size of the set's overall extent
        ext1 = max(b for (_, b), _ in boxes) - min(a for (a, _), _ in boxes)
        ext2 = max(d for _, (_, d) in boxes) - min(c for _, (c, _) in boxes)
    wins = []
    for (a, b), (c, d) in boxes:
        if require_interior and (a <= A or b >= B or c <= C or d >= D):
            raise DomainError("integration window reaches the boundary of chart_U0; "
                              "the scale is too large for this chart")
        if tile is None:
            ext1, ext2 = b - a, d - c
        wins.append(RefinementWindow((a, b), (c, d), ext1 / cells_per_axis,
                                     ext2 / cells_per_axis))
    return build_quadrature(surface, 0, wins, node_budget=node_budget, windows_only=True)
