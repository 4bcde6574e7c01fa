"""Measure-geometric estimators on the quadratic patch.

Every mass is computed by midpoint quadrature on refinement windows that are
located with conservative cell predicates (see
:func:`tracelab.surface.locate_windows`), then recomputed at half resolution;
the reported uncertainty is twice the difference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .exceptions import ContractError, DomainError, EvaluationError
from .packets import (DECAY_ORDER, Tube, TubeFamily, WavePacket, _complete_frame,
                      tube_distance)
from .surface import (QuadraticSurface, SurfaceQuadrature, build_quadrature, check_unit,
                      integrate, tangency_line, window_quadrature)

RHO0 = 2.0**-4
SIGMA0 = 2.0**-2
PACKET_CUTOFF = 24.0
SCHUR_TRANSVERSE = 64
SCHUR_LONGITUDINAL = 8


@dataclass(frozen=True)
class MassEstimate:
    """A quadrature value with its self-convergence uncertainty.

    ``tail_bound`` is an analytic bound for the part of the integral cut
    off by the integration window; it is not included in ``value``.
    """

    value: float
    method: str
    resolution: dict
    uncertainty: float
    tail_bound: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise EvaluationError("mass estimate is not finite")
        if self.uncertainty < 0:
            raise ContractError("uncertainty must be nonnegative")

    @property
    def relative_uncertainty(self) -> float:
        return self.uncertainty / abs(self.value) if self.value else 0.0


def _converged(build: Callable[[int], SurfaceQuadrature],
               integrand: Callable[[SurfaceQuadrature], np.ndarray],
               cells: int, tail: float = 0.0) -> MassEstimate:
    fine = build(cells)
    coarse = build(max(cells // 2, 2))
    value = float(integrate(fine, integrand)) if len(fine) else 0.0
    value_c = float(integrate(coarse, integrand)) if len(coarse) else 0.0
    res = {"cells_per_axis": cells, "nodes": len(fine), "windows": len(fine.windows)}
    return MassEstimate(value, "quadrature", res, 2.0 * abs(value - value_c), tail)


# ---------------------------------------------------------------------
# Conservative cell predicates
# ---------------------------------------------------------------------

def _strip_predicate(surface, v, rho):
    half = math.sqrt(rho)
    lip = surface.tangency_lipschitz

    def pred(c, hd):
        return np.abs(surface.tangency_values(c, v)) <= half + lip * hd
    return pred


def _outside_strip_predicate(surface, v, rho):
    half = math.sqrt(rho)
    lip = surface.tangency_lipschitz

    def pred(c, hd):
        return np.abs(surface.tangency_values(c, v)) >= half - lip * hd
    return pred


def _tube_predicate(surface, tube: Tube, excess: float = 0.0):
    """Cells whose image can meet ``{tube_distance <= excess}``."""
    lip = surface.chart_lipschitz

    def pred(c, hd):
        return tube_distance(tube, surface.chart(c)) <= excess + lip * hd / tube.radius_scale
    return pred


def _ball_predicate(surface, v, z, r):
    lip = surface.chart_lipschitz
    e1, e2 = _complete_frame(v)

    def pred(c, hd):
        d = surface.chart(c) - z
        return np.hypot(d @ e1, d @ e2) <= r + lip * hd
    return pred


def _all(*preds):
    def pred(c, hd):
        out = preds[0](c, hd)
        for p in preds[1:]:
            out = out & p(c, hd)
        return out
    return pred


def _check_parallel(tube: Tube, v):
    if np.linalg.norm(np.cross(tube.direction, v)) > 1e-9:
        raise ContractError("tube direction must be parallel to v")


# ---------------------------------------------------------------------
# Strip and tube masses
# ---------------------------------------------------------------------

def extreme_tube_mass(surface: QuadraticSurface, v, rho: float, tube: Tube, *,
                      cells: int = 1024, rho0: float = RHO0) -> MassEstimate:
    """``mu(S ∩ T ∩ E_v^ext)`` for a tube parallel to ``v``.

    Raises
    ------
    DomainError
        The integration window reaches the boundary of ``chart_U0``.
    """
    v = check_unit(v)
    _check_parallel(tube, v)
    if not 0 < rho <= rho0:
        raise ContractError(f"rho must lie in (0, {rho0}]")
    pred = _all(_strip_predicate(surface, v, rho), _tube_predicate(surface, tube))
    detect = min(tube.radius, math.sqrt(rho)) / 4
    half = math.sqrt(rho)

    def build(n):
        return window_quadrature(surface, pred, detect, n, require_interior=True)

    def g(q):
        return (tube.contains(q.x) & (np.abs(surface.tangency_values(q.u, v)) <= half)).astype(float)
    return _converged(build, g, cells)


def sublevel_tube(tube: Tube, sigma: float) -> Tube:
    """The ``sigma``-scale tube on the same axis (radius ``C0 * sigma``)."""
    return replace(tube, radius_scale=sigma, half_length=tube.half_length + sigma)


def sublevel_mass(surface: QuadraticSurface, v, rho: float, tube: Tube, sigma: float, *,
                  cells: int = 1024, sigma0: float = SIGMA0) -> MassEstimate:
    """``mu(E_v^ext ∩ N_sigma(T))`` with ``N_sigma(T)`` the sigma-scale tube on the axis of ``T``."""
    if not rho <= sigma <= sigma0:
        raise ContractError(f"need rho <= sigma <= {sigma0}")
    v = check_unit(v)
    _check_parallel(tube, v)
    big = sublevel_tube(tube, sigma)
    pred = _all(_strip_predicate(surface, v, rho), _tube_predicate(surface, big))
    detect = min(big.radius, math.sqrt(rho)) / 4
    half = math.sqrt(rho)

    def build(n):
        return window_quadrature(surface, pred, detect, n)

    def g(q):
        return (big.contains(q.x) & (np.abs(surface.tangency_values(q.u, v)) <= half)).astype(float)
    return _converged(build, g, cells)


def strip_mass(surface: QuadraticSurface, v, rho: float, *, cells: int = 512) -> MassEstimate:
    """``mu(E_v^ext)``."""
    v = check_unit(v)
    half = math.sqrt(rho)
    pred = _strip_predicate(surface, v, rho)

    def build(n):
        return window_quadrature(surface, pred, half / 4, n, tile=1 / 8)

    def g(q):
        return (np.abs(surface.tangency_values(q.u, v)) <= half).astype(float)
    return _converged(build, g, cells)


def tail_weighted_extreme_mass(surface: QuadraticSurface, v, rho: float, tube: Tube, N: float,
                               *, window: float = 64.0, cells: int = 1024) -> MassEstimate:
    """``int_{E_v^ext} (1 + dist(x, T))^-N dmu`` with ``dist`` in tube units.

    Integrated where ``dist <= window``; the rest is bounded by
    ``(1 + window)^-N`` times the total mass of the patch.
    """
    if N <= 2:
        raise ContractError("N must exceed 2")
    v = check_unit(v)
    _check_parallel(tube, v)
    half = math.sqrt(rho)
    pred = _all(_strip_predicate(surface, v, rho), _tube_predicate(surface, tube, window))
    detect = min(tube.radius, half) / 4
    total = integrate(build_quadrature(surface, 64), lambda q: np.ones(len(q)))
    tail = (1.0 + window) ** (-N) * total

    def build(n):
        return window_quadrature(surface, pred, detect, n)

    def g(q):
        d = tube_distance(tube, q.x)
        inside = (np.abs(surface.tangency_values(q.u, v)) <= half) & (d <= window)
        return np.where(inside, (1.0 + d) ** (-N), 0.0)
    return _converged(build, g, cells, tail)


def hyperbolic_generator_mass(rho: float, *, cells: int = 2048,
                              geometry_constant: float = 2.0) -> MassEstimate:
    """Extreme mass of the tube along the generator ``(1, 1, 0)/sqrt 2`` of the saddle ``lambda = (1, -1)``."""
    surface = QuadraticSurface(1.0, -1.0, contrast=True)
    v = np.array([1.0, 1.0, 0.0]) / math.sqrt(2.0)
    tube = Tube.through(np.zeros(3), v, rho, half_length=geometry_constant,
                        geometry_constant=geometry_constant)
    half = math.sqrt(rho)
    pred = _all(_strip_predicate(surface, v, rho), _tube_predicate(surface, tube))
    detect = tube.radius / 4

    def build(n):
        return window_quadrature(surface, pred, detect, n, tile=1 / 16)

    def g(q):
        return (tube.contains(q.x) & (np.abs(surface.tangency_values(q.u, v)) <= half)).astype(float)
    return _converged(build, g, cells)


# ---------------------------------------------------------------------
# Projections
# ---------------------------------------------------------------------

def fiber_parameters(surface: QuadraticSurface, v, z):
    """Parameters ``u`` with ``X(u)`` on the line ``z + t v`` (up to two, for each row of ``z``).

    Returns an array ``(n, 2, 2)`` of candidate ``u`` and a mask ``(n, 2)`` of
    real roots. The quadratic ``A t^2 + B t + C`` has
    ``A = Q(v1, v2)``, ``B = lambda1 z1 v1 + lambda2 z2 v2 - v3`` and
    ``C = Q(z1, z2) - z3``.
    """
    v = check_unit(v)
    z = np.atleast_2d(np.asarray(z, float))
    l1, l2 = surface.lambda1, surface.lambda2
    A = 0.5 * (l1 * v[0] ** 2 + l2 * v[1] ** 2)
    B = l1 * z[:, 0] * v[0] + l2 * z[:, 1] * v[1] - v[2]
    C = 0.5 * (l1 * z[:, 0] ** 2 + l2 * z[:, 1] ** 2) - z[:, 2]
    n = len(z)
    t = np.zeros((n, 2))
    ok = np.zeros((n, 2), dtype=bool)
    if abs(A) < 1e-15:
        if np.any((np.abs(B) < 1e-15) & (np.abs(C) < 1e-15)):
            raise EvaluationError("the line lies in the surface; the fiber is infinite")
        lin = np.abs(B) >= 1e-15
        t[lin, 0] = -C[lin] / B[lin]
        ok[:, 0] = lin
    else:
        disc = B * B - 4 * A * C
        real = disc >= 0
        sq = np.sqrt(np.where(real, disc, 0.0))
        # stable pair of roots
        q = -0.5 * (B + np.copysign(sq, B))
        r1 = np.where(q != 0, q / A, 0.0)
        r2 = np.where(q != 0, C / np.where(q != 0, q, 1.0), 0.0)
        t[:, 0], t[:, 1] = r1, r2
        ok[:, 0] = real
        ok[:, 1] = real & (disc > 0)
    u = z[:, None, :2] + t[..., None] * v[:2]
    return u, ok


def fiber_multiplicity(surface: QuadraticSurface, v, z):
    """Number of points of ``X(U0)`` on the line through ``z`` with direction ``v``."""
    u, ok = fiber_parameters(surface, v, z)
    inside = ok & surface.in_chart(u, surface.chart_U0)
    counts = inside.sum(axis=1)
    return int(counts[0]) if np.ndim(z) == 1 else counts


def multiplicity_audit(surface: QuadraticSurface, rho: float, *, n_directions: int = 100,
                       per_direction: int = 100, seed: int = 0) -> tuple[int, int, int]:
    """Largest fiber count outside ``E_v^ext`` over seeded random fibers.

    Each fiber passes through ``X(u)`` for a random ``u`` outside the extreme
    strip of a random relevant direction. Returns ``(max count, number of
    fibers above 2, number of fibers)``.
    """
    rng = np.random.default_rng(seed)
    dirs = random_relevant_directions(surface, n_directions, seed)
    (a, b), (c, d) = surface.chart_U0
    half = math.sqrt(rho)
    worst, bad, total = 0, 0, 0
    for v in dirs:
        u = np.column_stack([rng.uniform(a, b, 4 * per_direction),
                             rng.uniform(c, d, 4 * per_direction)])
        u = u[np.abs(surface.tangency_values(u, v)) > half][:per_direction]
        if not len(u):
            continue
        uu, ok = fiber_parameters(surface, v, surface.chart(u))
        keep = ok & surface.in_chart(uu, surface.chart_U0) \
            & (np.abs(surface.tangency_values(uu, v)) > half)
        counts = keep.sum(axis=1)
        worst = max(worst, int(counts.max()))
        bad += int((counts > 2).sum())
        total += len(u)
    return worst, bad, total


def projected_density(surface: QuadraticSurface, v, w, rho: float | None = None):
    """Area-formula density of ``(pi_v)_# mu`` at points ``w`` of the plane (given in 3D).

    Equals the sum of ``chi / |h_v|`` over the fiber; with ``rho`` only fiber
    points outside the extreme strip count.
    """
    v = check_unit(v)
    u, ok = fiber_parameters(surface, v, w)
    h = np.abs(surface.tangency_values(u, v))
    keep = ok & surface.in_chart(u, surface.chart_U0) & (h > 0)
    if rho is not None:
        keep &= h > math.sqrt(rho)
    dens = np.where(keep, surface.density(u) / np.where(h > 0, h, 1.0), 0.0)
    return dens.sum(axis=1)


def pushforward_ball_mass(surface: QuadraticSurface, v, z, r: float, region="all", *,
                          cells: int = 512, quadrature: SurfaceQuadrature | None = None
                          ) -> MassEstimate:
    """``(pi_v)_# (mu restricted to region) (B(z, r))`` by indicator quadrature.

    ``region`` is ``"all"`` or ``("outside_extreme", rho)``. With an explicit
    ``quadrature`` that rule is used as is (no windows, no uncertainty).
    """
    v = check_unit(v)
    z = np.asarray(z, float)
    z = z - (z @ v) * v
    e1, e2 = _complete_frame(v)
    rho = None
    if region != "all":
        kind, rho = region
        if kind != "outside_extreme":
            raise ContractError(f"unknown region {region!r}")

    def g(q):
        d = q.x - z
        inside = np.hypot(d @ e1, d @ e2) <= r
        if rho is not None:
            inside &= np.abs(surface.tangency_values(q.u, v)) > math.sqrt(rho)
        return inside.astype(float)

    if quadrature is not None:
        return MassEstimate(float(integrate(quadrature, g)), "quadrature",
                            {"nodes": len(quadrature)}, 0.0)
    preds = [_ball_predicate(surface, v, z, r)]
    if rho is not None:
        preds.append(_outside_strip_predicate(surface, v, rho))
    pred = _all(*preds)

    def build(n):
        return window_quadrature(surface, pred, r / 4, n)
    return _converged(build, g, cells)


def _disc_average(fn, z, r, e1, e2, n_r=12, n_a=32):
    """Average of ``fn`` over discs ``B(z_i, r)`` in the plane, by polar Gauss-Legendre."""
    x, w = np.polynomial.legendre.leggauss(n_r)
    rad = 0.5 * r * (x + 1)
    wr = 0.5 * r * w * rad
    ang = 2 * np.pi * (np.arange(n_a) + 0.5) / n_a
    offs = (rad[:, None, None] * (np.cos(ang)[None, :, None] * e1 + np.sin(ang)[None, :, None] * e2))
    pts = z[:, None, None, :] + offs[None]
    vals = fn(pts.reshape(-1, 3)).reshape(len(z), n_r, n_a)
    return (vals * wr[None, :, None]).sum(axis=(1, 2)) * (2 * np.pi / n_a) / (np.pi * r * r)


def strip_boundary_points(surface: QuadraticSurface, v, rho: float, n: int = 33,
                          levels=(1.0, 1.05, 1.15, 1.3, 1.6, 2.0)) -> np.ndarray:
    """Parameter points on the level sets ``h_v = ±c sqrt(rho)`` near the tangency line."""
    v = check_unit(v)
    line = tangency_line(surface, v)
    if line is None:
        return np.zeros((0, 2))
    base = line.points(n)
    a = np.array(line.coefficients)
    grad = -a / np.linalg.norm(a)
    out = []
    for c in levels:
        for sign in (-1.0, 1.0):
            target = sign * c * math.sqrt(rho)
            u = base.copy()
            for _ in range(30):
                h = surface.tangency_values(u, v)
                eps = 1e-7
                dh = (surface.tangency_values(u + eps * grad, v) - h) / eps
                u = u + ((target - h) / dh)[:, None] * grad
            out.append(u)
    u = np.concatenate(out)
    return u[surface.in_chart(u, surface.chart_U0) & (surface.density(u) > 0)]


@dataclass(frozen=True)
class ProjectionSup:
    value: float
    center: np.ndarray
    mass: MassEstimate
    candidates: int
    density_estimate: float


def degenerate_projection_sup(surface: QuadraticSurface, v, rho: float, r: float, *,
                              grid: int = 33, top: int = 6, cells: int = 512) -> ProjectionSup:
    """Approximate ``sup_z (pi_v)_#(mu outside E_v^ext)(B(z, r)) / r^2``.

    Candidate centers are a ``grid x grid`` lattice over the projected support,
    the projections of points just outside the extreme strip, and the
    projected tube axes of the parabolic lattice nearest to those. Candidates
    are ranked by the disc average of the area-formula density; the best
    ``top`` are then measured by indicator quadrature and the largest ratio
    is returned.
    """
    v = check_unit(v)
    e1, e2 = _complete_frame(v)
    (a, b), (c, d) = surface.chart_U0
    g1, g2 = np.meshgrid(np.linspace(a, b, 65), np.linspace(c, d, 65), indexing="ij")
    ug = np.stack([g1.ravel(), g2.ravel()], axis=1)
    ug = ug[surface.density(ug) > 0]
    P = surface.chart(ug)
    p1, p2 = P @ e1, P @ e2
    s1, s2 = np.meshgrid(np.linspace(p1.min(), p1.max(), grid),
                         np.linspace(p2.min(), p2.max(), grid), indexing="ij")
    planar = [np.column_stack([s1.ravel(), s2.ravel()])]
    ub = strip_boundary_points(surface, v, rho)
    if len(ub):
        Pb = surface.chart(ub)
        pb = np.column_stack([Pb @ e1, Pb @ e2])
        planar.append(pb)
        lat = np.round(pb / rho)
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                planar.append((lat + [di, dj]) * rho)
    planar = np.unique(np.concatenate(planar), axis=0)
    z = planar[:, :1] * e1 + planar[:, 1:] * e2
    avg = _disc_average(lambda w: projected_density(surface, v, w, rho), z, r, e1, e2)
    order = np.argsort(-avg, kind="stable")[:top]
    best = None
    for i in order:
        m = pushforward_ball_mass(surface, v, z[i], r, ("outside_extreme", rho), cells=cells)
        if best is None or m.value > best[1].value:
            best = (i, m)
    i, m = best
    return ProjectionSup(m.value / r**2, z[i], m, len(z), float(avg[order[0]]) * math.pi)


# ---------------------------------------------------------------------
# Packets on the surface
# ---------------------------------------------------------------------

def _region_mask(surface, packet: WavePacket, q, region):
    if region in (None, "all"):
        return np.ones(len(q), dtype=bool)
    h = np.abs(surface.tangency_values(q.u, packet.tube.direction))
    half = math.sqrt(packet.rho)
    if region == "extreme":
        return h <= half
    if region == "outside_extreme":
        return h > half
    if region == "empty":
        return np.zeros(len(q), dtype=bool)
    raise ContractError(f"unknown region {region!r}")


def single_packet_energy(packet: WavePacket, quadrature: SurfaceQuadrature, region="all") -> float:
    """``int_region |phi_T|^2 dmu`` on a given quadrature.

    ``region`` is ``"all"``, ``"extreme"`` or ``"outside_extreme"`` relative to
    the extreme strip of the packet's own direction at its own scale.
    """
    surface = quadrature.surface

    def g(q):
        return np.where(_region_mask(surface, packet, q, region), packet.modulus(q.x) ** 2, 0.0)
    return float(integrate(quadrature, g)) if len(quadrature) else 0.0


def packet_window(surface: QuadraticSurface, packet: WavePacket, cutoff: float = PACKET_CUTOFF,
                  region="all"):
    """Conservative predicate for ``transverse distance <= cutoff * rho`` (and the region)."""
    t = packet.tube
    lip = surface.chart_lipschitz
    rho = packet.rho

    def near(c, hd):
        return t.transverse_distance(surface.chart(c)) <= cutoff * rho + lip * hd
    if region == "extreme":
        return _all(near, _strip_predicate(surface, t.direction, rho))
    if region == "outside_extreme":
        return _all(near, _outside_strip_predicate(surface, t.direction, rho))
    return near


def packet_tail_bound(surface: QuadraticSurface, packet: WavePacket, cutoff: float) -> float:
    """Bound for ``int |phi|^2`` over the part of the patch farther than ``cutoff * rho`` from the axis."""
    a = packet.profile_transverse
    sup_a = _sup_beyond(a, cutoff)
    sup_b = float(np.abs(packet.profile_longitudinal.values).max())
    total = integrate(build_quadrature(surface, 64), lambda q: np.ones(len(q)))
    return (sup_a * sup_b / packet.rho) ** 2 * total


def _sup_beyond(profile, t: float) -> float:
    """``sup_{r >= t} |profile(r)|`` from the table, with the certified decay beyond it."""
    g = profile.grid
    sel = g >= t
    tab = float(np.abs(profile.values[sel]).max()) if sel.any() else 0.0
    beyond = profile.decay_constant * (1 + max(t, g[-1])) ** (-DECAY_ORDER)
    return max(tab, beyond)


def packet_energy(surface: QuadraticSurface, packet: WavePacket, region="all", *,
                  cutoff: float = PACKET_CUTOFF, cells: int = 512) -> MassEstimate:
    """``int_region |phi_T|^2 dmu`` on windows within ``cutoff * rho`` of the tube axis."""
    pred = packet_window(surface, packet, cutoff, region)
    detect = packet.rho / 2

    def build(n):
        return window_quadrature(surface, pred, detect, n)

    def g(q):
        return np.where(_region_mask(surface, packet, q, region), packet.modulus(q.x) ** 2, 0.0)
    if region == "empty":
        return MassEstimate(0.0, "quadrature", {}, 0.0)
    return _converged(build, g, cells, packet_tail_bound(surface, packet, cutoff))


# ---------------------------------------------------------------------
# Schur rows
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class SchurRow:
    """Truncated row sum ``sum_T' |K(T, T')|`` with its analytic tail bound."""

    value: float
    tail_bound: float
    terms: int
    diagonal: float
    kernel: np.ndarray = field(repr=False)
    partners: np.ndarray = field(repr=False)


def _lattice_sum_bound(profile, offset: float, start: float, dim: int) -> float:
    """Bound ``sum_{|k|_inf > start} sup |profile|`` at distance ``|k| - offset`` over a lattice."""
    total = 0.0
    k = int(math.floor(start)) + 1
    while True:
        shell = 8 * k if dim == 2 else 2
        val = _sup_beyond(profile, max(0.0, k - offset))
        total += shell * val
        if k > start + 8 and shell * val < 1e-18:
            break
        k += 1
        if k > 100000:
            break
    return total


def _full_lattice_sum(profile, dim: int) -> float:
    """``sup_y sum_m |profile(|y - m|)|`` bounded via the monotone envelope."""
    return _sup_beyond(profile, 0.0) * (9 if dim == 2 else 3) + _lattice_sum_bound(profile, 1.5, 1, dim)


def schur_row_sum(family: TubeFamily, pivot: int, surface: QuadraticSurface, v, rho: float, *,
                  transverse: int = SCHUR_TRANSVERSE, longitudinal: int = SCHUR_LONGITUDINAL,
                  cutoff: float = PACKET_CUTOFF, cells: int = 128) -> SchurRow:
    """Row sum of ``|K(T, T')|``, ``K(T, T') = int_{E_v^ext} phi_T conj(phi_T') dmu``.

    Partners ``T'`` of the same box within ``transverse`` lattice steps in
    each transverse index and ``longitudinal`` in ``j`` are summed exactly.
    The integral is restricted to nodes within ``cutoff * rho`` of the pivot
    axis. The returned tail bound covers both truncations using the certified
    decay of the profiles.
    """
    v = check_unit(v)
    if abs(rho - family.rho) > 1e-12 * rho:
        raise ContractError("rho must match the family scale")
    P = family.packet(pivot)
    _check_parallel(P.tube, v)
    pred = packet_window(surface, P, cutoff, "extreme")
    q = window_quadrature(surface, pred, rho / 2, cells)
    if len(q) == 0:
        return SchurRow(0.0, 0.0, 0, 0.0, np.zeros(0), np.zeros((0, 3), int))
    half = math.sqrt(rho)
    inside = np.abs(surface.tangency_values(q.u, v)) <= half
    q = q.subset(np.flatnonzero(inside))
    a, b = P.profile_transverse, P.profile_longitudinal
    e1, e2 = family.box.tangent_frame
    vt = family.direction
    x = q.x
    Y = np.column_stack([x @ e1, x @ e2]) / rho
    S = x @ vt
    m1p, m2p, jp = family.indices[pivot]
    # carriers coincide inside a family, so the kernel is real
    g = q.weights * P.envelope(x) / rho
    dm = np.arange(-transverse, transverse + 1)
    dj = np.arange(-longitudinal, longitudinal + 1)
    Bj = b(S[:, None] - (jp + dj)[None, :])                       # nodes x j
    gB = g[:, None] * Bj
    K = np.empty((len(dm), len(dm), len(dj)))
    for i1, d1 in enumerate(dm):
        m1 = m1p + d1
        r1 = (Y[:, 0] - m1) ** 2
        m2 = m2p + dm
        A = a(np.sqrt(r1[None, :] + (Y[None, :, 1] - m2[:, None]) ** 2))   # m2 x nodes
        K[i1] = A @ gB
    absK = np.abs(K)
    row = math.fsum(absK.ravel())
    diag = float(K[transverse, transverse, longitudinal])
    # tails: partners beyond the index box, and the pivot beyond the cutoff
    r_nodes = np.linalg.norm(Y - [m1p, m2p], axis=1)
    off = float(r_nodes.max()) if len(r_nodes) else 0.0
    s_rel = float(np.abs(S - jp).max()) if len(S) else 0.0
    int_abs = float(np.sum(np.abs(g)))
    Sa = _full_lattice_sum(a, 2)
    Sb = _full_lattice_sum(b, 1)
    out_a = _lattice_sum_bound(a, off, transverse, 2)
    out_b = _lattice_sum_bound(b, s_rel, longitudinal, 1)
    tail_partners = int_abs * (out_a * Sb + Sa * out_b)
    strip = strip_mass(surface, v, rho, cells=128).value
    tail_pivot = (_sup_beyond(a, cutoff) * float(np.abs(b.values).max()) / rho) * strip \
        * Sa * Sb / rho
    mm1, mm2, jj = np.meshgrid(m1p + dm, m2p + dm, jp + dj, indexing="ij")
    partners = np.stack([mm1.ravel(), mm2.ravel(), jj.ravel()], axis=1)
    return SchurRow(row, tail_partners + tail_pivot, absK.size, diag, K.ravel(), partners)


def schur_kernel_entry(family: TubeFamily, i: int, partner, surface: QuadraticSurface, rho: float,
                       *, cutoff: float = PACKET_CUTOFF, cells: int = 128) -> float:
    """``K(T_i, T')`` integrated on nodes near ``T_i`` (``partner`` given by lattice indices)."""
    P = family.packet(i)
    v = family.direction
    e1, e2 = family.box.tangent_frame
    m1, m2, j = partner
    center = rho * m1 * e1 + rho * m2 * e2 + j * v
    tube = replace(P.tube, center=center)
    Q = replace(P, tube=tube)
    pred = packet_window(surface, P, cutoff, "extreme")
    q = window_quadrature(surface, pred, rho / 2, cells)
    half = math.sqrt(rho)

    def g(qq):
        inside = np.abs(surface.tangency_values(qq.u, v)) <= half
        return np.where(inside, P.envelope(qq.x) * Q.envelope(qq.x), 0.0)
    return float(integrate(q, g))


# ---------------------------------------------------------------------
# Tangency geometry
# ---------------------------------------------------------------------

def random_relevant_directions(surface: QuadraticSurface, n: int, seed: int = 0) -> np.ndarray:
    """``n`` seeded uniform unit vectors whose tangency line meets ``chart_U0``."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        if tangency_line(surface, v) is not None and tangency_line(surface, v).length > 1e-3:
            out.append(v)
    return np.array(out)


def _fd_gradient(surface, u, v, step):
    e = np.eye(2) * step
    return np.stack([(surface.tangency_values(u + e[k], v) - surface.tangency_values(u - e[k], v))
                     / (2 * step) for k in range(2)], axis=-1)


def tangency_gradient_floor(surface: QuadraticSurface, n_directions: int = 1000, *,
                            seed: int = 0, points: int = 33, step: float = 1e-6,
                            directions=None) -> float:
    """Minimum of the finite-difference ``|grad h_v|`` over sampled points of ``Z_v``."""
    dirs = random_relevant_directions(surface, n_directions, seed) if directions is None \
        else np.atleast_2d(directions)
    floor = math.inf
    for v in dirs:
        line = tangency_line(surface, v)
        if line is None:
            continue
        u = line.points(points)
        floor = min(floor, float(np.linalg.norm(_fd_gradient(surface, u, v, step), axis=1).min()))
    return floor


def tangency_curve_speed_floor(surface: QuadraticSurface, v, *, points: int = 257,
                               step: float = 1e-6) -> float:
    """Minimum of ``|d/dt pi_v X(gamma(t))|`` along the unit-speed tangency line."""
    v = check_unit(v)
    line = tangency_line(surface, v)
    if line is None:
        raise DomainError("v is not a relevant direction")
    e1, e2 = _complete_frame(v)
    tan = line.tangent
    u = line.points(points)

    def proj(uu):
        x = surface.chart(uu)
        return np.column_stack([x @ e1, x @ e2])
    d = (proj(u + step * tan) - proj(u - step * tan)) / (2 * step)
    return float(np.linalg.norm(d, axis=1).min())


# ---------------------------------------------------------------------
# Dyadic overlap
# ---------------------------------------------------------------------

def _disc_lattice_count(c1, c2, radius, lo, hi):
    """Integer points ``m`` with ``|m - c| <= radius`` and ``lo <= m_i <= hi``."""
    R = int(math.ceil(radius)) + 1
    m1 = np.floor(c1)[:, None] + np.arange(-R, R + 2)[None, :]
    dy2 = radius**2 - (m1 - c1[:, None]) ** 2
    ok = (dy2 >= 0) & (m1 >= lo) & (m1 <= hi)
    w = np.sqrt(np.maximum(dy2, 0.0))
    top = np.minimum(np.floor(c2[:, None] + w), hi)
    bot = np.maximum(np.ceil(c2[:, None] - w), lo)
    return np.where(ok, np.maximum(0, top - bot + 1), 0).sum(axis=1).astype(np.int64)


def overlap_counts(family: TubeFamily, x, k: int) -> np.ndarray:
    """Exact ``sum_T 1_{2^k T}(x)`` over the family, for each row of ``x``."""
    x = np.atleast_2d(np.asarray(x, float))
    e1, e2 = family.box.tangent_frame
    v = family.direction
    rho = family.rho
    idx = family.indices
    lo, hi = int(idx[:, 0].min()), int(idx[:, 0].max())
    jlo, jhi = int(idx[:, 2].min()), int(idx[:, 2].max())
    radius = family.geometry_constant * 2**k
    cm = _disc_lattice_count(x @ e1 / rho, x @ e2 / rho, radius, lo, hi)
    s = x @ v
    L = family.geometry_constant
    cj = (np.minimum(np.floor(s + L), jhi) - np.maximum(np.ceil(s - L), jlo) + 1).clip(min=0)
    return cm * cj.astype(np.int64)


def max_overlap(family: TubeFamily, ks, n_samples: int = 10_000, *, seed: int = 0,
                sample_window: float = 0.5) -> dict[int, int]:
    """Sup over seeded samples in ``[-w, w]^3`` of the overlap count of dilated tubes."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-sample_window, sample_window, size=(n_samples, 3))
    return {int(k): int(overlap_counts(family, x, k).max()) for k in ks}
