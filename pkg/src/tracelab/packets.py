"""Tubes, model wave packets and lattice tube families.

A packet adapted to a tube with direction ``v`` is

    phi(x) = rho**-1 * exp(2 pi i xi0 . x) * a(|y - y0| / rho) * b(s - s0),

where ``s = x . v`` and ``y`` is the projection of ``x`` onto ``v``-perp. The
profiles ``a`` (radial in the plane) and ``b`` are inverse Fourier transforms
of the smooth compactly supported bump ``exp(-1 / (1 - t**2))`` scaled to a
small support radius, and are normalized to unit L2 norm.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import j0

from .exceptions import ConstructionError, ContractError
from .frequency import FrequencyBox
from .surface import check_unit

TRANSVERSE_SUPPORT = 0.25
LONGITUDINAL_SUPPORT = 0.25
GEOMETRY_CONSTANT = 2.0
CORE_RADIUS = 0.5
DECAY_ORDER = 6
FFT_SAMPLES = 2**14
RADIAL_TABLE_MAX = 128.0
RADIAL_TABLE_STEP = 1 / 64
HANKEL_NODES = 1024


def bump(t):
    """``exp(-1 / (1 - t^2))`` on ``|t| < 1``, zero elsewhere."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


def _gauss_on(a, b, n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


@dataclass(frozen=True, eq=False)
class PacketProfile:
    """Tabulated unit-norm profile with compactly supported Fourier transform.

    Attributes
    ----------
    kind : {"radial", "line"}
        ``radial`` profiles live on the plane and depend on ``|y|``;
        ``line`` profiles live on the real line and are even.
    frequency_support_radius : float
        Radius of the Fourier support, in the profile's own variable.
    grid, values : ndarray
        Sample table on ``[0, grid[-1]]``; the profile is set to 0 beyond it.
    floor_constant : float
        Lower bound of the profile on ``[0, core_radius]``.
    decay_constant : float
        ``sup |profile(r)| (1 + r)**DECAY_ORDER`` over the table.
    """

    kind: str
    frequency_support_radius: float
    grid: np.ndarray
    values: np.ndarray
    floor_constant: float
    core_radius: float
    decay_constant: float
    spline: CubicSpline = field(repr=False)

    def __call__(self, r):
        # uniform grid: locate the spline piece by index arithmetic
        r = np.abs(np.asarray(r, dtype=float))
        step = self.grid[1] - self.grid[0]
        n = len(self.grid) - 1
        pos = r / step
        i = np.minimum(pos.astype(np.int64), n - 1)
        t = (pos - i) * step
        c = self.spline.c
        out = ((c[0, i] * t + c[1, i]) * t + c[2, i]) * t + c[3, i]
        return np.where(r <= self.grid[-1], out, 0.0)

    @property
    def peak(self) -> float:
        return float(self.values[0])

    def fourier(self, k):
        """Fourier transform (normalized bump) at frequency magnitude ``k``."""
        return _bump_scale(self.kind, self.frequency_support_radius) * bump(
            np.asarray(k, float) / self.frequency_support_radius)

    def autocorrelation(self, d):
        """``int profile(w) profile(w - d) dw`` over the plane or line (via Plancherel)."""
        return _autocorrelation(self.kind, self.frequency_support_radius, np.asarray(d, float))

    def descriptor(self) -> dict:
        return {"kind": self.kind, "frequency_support_radius": self.frequency_support_radius,
                "floor_constant": self.floor_constant, "decay_order": DECAY_ORDER,
                "decay_constant": self.decay_constant}


@lru_cache(maxsize=None)
def _bump_scale(kind: str, kappa: float) -> float:
    """Factor making the scaled bump a unit vector in L2 of the plane or line."""
    k, w = _gauss_on(0.0, kappa, HANKEL_NODES)
    if kind == "radial":
        sq = 2 * math.pi * np.sum(w * bump(k / kappa) ** 2 * k)
    else:
        sq = 2 * np.sum(w * bump(k / kappa) ** 2)
    return 1.0 / math.sqrt(sq)


def _autocorrelation(kind, kappa, d):
    k, w = _gauss_on(0.0, kappa, HANKEL_NODES)
    spec = (_bump_scale(kind, kappa) * bump(k / kappa)) ** 2
    d = np.atleast_1d(d)
    out = np.empty(d.shape)
    flat = d.ravel()
    res = out.ravel()
    for s in range(0, len(flat), 4096):
        dd = flat[s:s + 4096, None]
        if kind == "radial":
            res[s:s + 4096] = 2 * math.pi * (j0(2 * math.pi * k * dd) * (w * spec * k)).sum(axis=1)
        else:
            res[s:s + 4096] = 2 * (np.cos(2 * math.pi * k * dd) * (w * spec)).sum(axis=1)
    return res.reshape(d.shape)


def _finish(kind, kappa, grid, values) -> PacketProfile:
    spline = CubicSpline(grid, values, bc_type=((1, 0.0), "not-a-knot"))
    core = grid <= CORE_RADIUS
    floor = float(np.abs(values[core]).min())
    decay = float(np.max(np.abs(values) * (1 + grid) ** DECAY_ORDER))
    return PacketProfile(kind, kappa, grid, values, floor, CORE_RADIUS, decay, spline)


@lru_cache(maxsize=None)
def radial_profile(kappa: float = TRANSVERSE_SUPPORT, step: float = RADIAL_TABLE_STEP,
                   r_max: float = RADIAL_TABLE_MAX) -> PacketProfile:
    """Planar radial profile by Gauss-Legendre quadrature of the Hankel transform."""
    if kappa <= 0:
        raise ContractError("support radius must be positive")
    k, w = _gauss_on(0.0, kappa, HANKEL_NODES)
    spec = _bump_scale("radial", kappa) * bump(k / kappa) * k * w
    grid = np.arange(0.0, r_max + 0.5 * step, step)
    values = np.empty_like(grid)
    for s in range(0, len(grid), 2048):
        values[s:s + 2048] = 2 * math.pi * (j0(2 * math.pi * grid[s:s + 2048, None] * k) * spec).sum(axis=1)
    return _finish("radial", kappa, grid, values)


@lru_cache(maxsize=None)
def line_profile(kappa: float = LONGITUDINAL_SUPPORT, n: int = FFT_SAMPLES,
                 oversample: int = 1) -> PacketProfile:
    """Even line profile by inverse FFT of the sampled bump.

    The bump is sampled with ``256 * oversample`` points per support radius;
    the spatial step is then ``1 / (n * dzeta)``.
    """
    if kappa <= 0:
        raise ContractError("support radius must be positive")
    dz = kappa / (256 * oversample)
    zeta = np.fft.fftfreq(n, d=1.0 / (n * dz))
    spec = _bump_scale("line", kappa) * bump(zeta / kappa)
    values = (np.fft.ifft(spec) * n * dz).real
    ds = 1.0 / (n * dz)
    half = n // 2
    grid = np.arange(half) * ds
    return _finish("line", kappa, grid, values[:half])


# ---------------------------------------------------------------------
# Tubes
# ---------------------------------------------------------------------

def _complete_frame(v, hint=None):
    if hint is not None:
        e1 = np.asarray(hint, float) - (np.asarray(hint, float) @ v) * v
        if np.linalg.norm(e1) > 1e-8:
            e1 /= np.linalg.norm(e1)
            return e1, np.cross(v, e1)
    a = np.eye(3)[int(np.argmin(np.abs(v)))]
    e1 = a - (a @ v) * v
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(v, e1)


@dataclass(frozen=True, eq=False)
class Tube:
    """Cylinder ``|pi_v(x - c)| <= C0 * rho * dilation``, ``|(x - c) . v| <= half_length``."""

    direction: np.ndarray
    frame: tuple[np.ndarray, np.ndarray]
    center: np.ndarray
    radius_scale: float
    half_length: float = GEOMETRY_CONSTANT
    geometry_constant: float = GEOMETRY_CONSTANT
    dilation: float = 1.0

    def __post_init__(self):
        v = check_unit(self.direction, "direction")
        e1, e2 = (np.asarray(e, float) for e in self.frame)
        gram = np.array([[e1 @ e1, e1 @ e2, e1 @ v], [e2 @ e1, e2 @ e2, e2 @ v],
                         [v @ e1, v @ e2, v @ v]])
        if np.abs(gram - np.eye(3)).max() > 1e-12:
            raise ContractError("tube frame must be orthonormal and perpendicular to the direction")
        if not 0.0 < self.radius_scale <= 1.0:
            raise ContractError("radius_scale must lie in (0, 1]")
        if self.geometry_constant < 1.0:
            raise ContractError("geometry_constant must be at least 1")
        object.__setattr__(self, "center", np.asarray(self.center, float))

    @classmethod
    def through(cls, center, direction, rho, *, frame_hint=None, **kw) -> "Tube":
        v = check_unit(direction, "direction")
        return cls(v, _complete_frame(v, frame_hint), np.asarray(center, float), rho, **kw)

    @property
    def radius(self) -> float:
        return self.geometry_constant * self.radius_scale * self.dilation

    def coordinates(self, x):
        """Transverse offset ``y`` (in the frame) and longitudinal offset ``s``."""
        d = np.asarray(x, float) - self.center
        e1, e2 = self.frame
        return np.stack([d @ e1, d @ e2], axis=-1), d @ self.direction

    def transverse_distance(self, x):
        d = np.asarray(x, float) - self.center
        s = d @ self.direction
        return np.linalg.norm(d - s[..., None] * self.direction, axis=-1)

    def contains(self, x):
        d = np.asarray(x, float) - self.center
        s = d @ self.direction
        r = np.linalg.norm(d - s[..., None] * self.direction, axis=-1)
        return (r <= self.radius) & (np.abs(s) <= self.half_length)

    def descriptor(self) -> dict:
        return {"direction": self.direction.tolist(), "frame": [e.tolist() for e in self.frame],
                "center": self.center.tolist(), "radius_scale": self.radius_scale,
                "half_length": self.half_length, "geometry_constant": self.geometry_constant,
                "dilation": self.dilation}


def tube_distance(tube: Tube, x):
    """Anisotropic excess ``max(0, r / rho - C0 * dilation, |s| - half_length)``."""
    d = np.asarray(x, float) - tube.center
    s = d @ tube.direction
    r = np.linalg.norm(d - s[..., None] * tube.direction, axis=-1)
    out = np.maximum(0.0, np.maximum(r / tube.radius_scale - tube.geometry_constant * tube.dilation,
                                     np.abs(s) - tube.half_length))
    return float(out) if np.ndim(out) == 0 else out


def dilate_transverse(tube: Tube, k: int) -> Tube:
    """Multiply the transverse radius by ``2**k``; the length is unchanged."""
    if int(k) != k or k < 0:
        raise ContractError("k must be a nonnegative integer")
    return replace(tube, dilation=tube.dilation * 2 ** int(k))


def parallelize_to_center(tube: Tube, v_center, A0: float = 1.0) -> Tube:
    """Re-axis a tube along a nearby central direction, inflating it to keep containment.

    A point at longitudinal offset ``s`` moves transversally by at most
    ``|s| sin(angle) <= half_length * A0 * rho`` when the axis turns, so the
    transverse dilation grows by the factor ``1 + A0 * half_length``.
    """
    w = check_unit(v_center, "v_center")
    angle = math.acos(max(-1.0, min(1.0, float(tube.direction @ w))))
    if angle > A0 * tube.radius_scale * (1 + 1e-12):
        raise ContractError(f"direction differs from the center by {angle:.3g} > A0*rho")
    if angle == 0.0:
        return tube
    frame = _complete_frame(w, tube.frame[0])
    r = tube.radius
    half = tube.half_length + r * math.sin(angle)
    return replace(tube, direction=w, frame=frame, half_length=half,
                   dilation=tube.dilation * (1 + A0 * tube.half_length))


# ---------------------------------------------------------------------
# Packets
# ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class WavePacket:
    tube: Tube
    carrier: np.ndarray
    profile_transverse: PacketProfile
    profile_longitudinal: PacketProfile
    box: FrequencyBox | None = None

    @property
    def rho(self) -> float:
        return self.tube.radius_scale

    @property
    def amplitude(self) -> float:
        return 1.0 / self.rho

    @property
    def analytic_norm(self) -> float:
        """``||a||_2 * ||b||_2``; both factors are 1 by construction of the bumps."""
        return 1.0

    def envelope(self, x):
        """Real amplitude ``rho^-1 a(r / rho) b(s)``; the packet is this times the carrier wave."""
        d = np.asarray(x, float) - self.tube.center
        s = d @ self.tube.direction
        r = np.linalg.norm(d - s[..., None] * self.tube.direction, axis=-1)
        return self.profile_transverse(r / self.rho) * self.profile_longitudinal(s) / self.rho

    def modulus(self, x):
        return np.abs(self.envelope(x))

    def descriptor(self) -> dict:
        return {"tube": self.tube.descriptor(), "carrier": self.carrier.tolist(),
                "box": None if self.box is None else self.box.index,
                "profile_transverse": self.profile_transverse.descriptor(),
                "profile_longitudinal": self.profile_longitudinal.descriptor()}

    def to_json(self) -> str:
        return json.dumps(self.descriptor(), sort_keys=True)


def evaluate(packet: WavePacket, x):
    """Complex packet value at points ``x`` of shape ``(..., 3)``."""
    x = np.asarray(x, float)
    out = packet.envelope(x) * np.exp(2j * math.pi * (x @ packet.carrier))
    return complex(out) if np.ndim(out) == 0 else out


def frequency_support_samples(packet: WavePacket, n_angle: int = 64) -> np.ndarray:
    """Points on the boundary of the packet's Fourier support (a disc times a segment)."""
    rho = packet.rho
    e1, e2 = packet.tube.frame
    v = packet.tube.direction
    kt = packet.profile_transverse.frequency_support_radius / rho
    kl = packet.profile_longitudinal.frequency_support_radius
    ang = 2 * np.pi * np.arange(n_angle) / n_angle
    ring = kt * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)
    pts = [packet.carrier + ring + z * v for z in (-kl, 0.0, kl)]
    pts.append(packet.carrier + np.outer([-kl, kl], v))
    return np.concatenate(pts)


def make_model_packet(box: FrequencyBox, tube_center, rho: float, *,
                      transverse_support: float = TRANSVERSE_SUPPORT,
                      longitudinal_support: float = LONGITUDINAL_SUPPORT,
                      geometry_constant: float = GEOMETRY_CONSTANT) -> WavePacket:
    """Packet on the tube through ``tube_center`` along the box direction, carrier at the box center."""
    if abs(rho - box.R ** -0.5) > 1e-12 * rho:
        raise ContractError(f"rho must equal R**-0.5 = {box.R ** -0.5}, got {rho}")
    tube = Tube(box.center_direction, box.tangent_frame, np.asarray(tube_center, float), rho,
                half_length=geometry_constant, geometry_constant=geometry_constant)
    packet = WavePacket(tube, box.plateau_center(), radial_profile(transverse_support),
                        line_profile(longitudinal_support), box)
    if not box.in_plateau(frequency_support_samples(packet)).all():
        raise ConstructionError("packet frequency support leaves the plateau of its box")
    return packet


# ---------------------------------------------------------------------
# Families
# ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TubeFamily:
    """Lattice tubes ``rho*m1*e1 + rho*m2*e2 + j*v`` clipped to a physical window."""

    box: FrequencyBox
    rho: float
    indices: np.ndarray
    geometry_constant: float = GEOMETRY_CONSTANT

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def direction(self) -> np.ndarray:
        return self.box.center_direction

    @property
    def axis_points(self) -> np.ndarray:
        e1, e2 = self.box.tangent_frame
        m1, m2, j = self.indices.T
        return (self.rho * m1[:, None] * e1 + self.rho * m2[:, None] * e2
                + j[:, None] * self.direction)

    def tube(self, i: int) -> Tube:
        return Tube(self.direction, self.box.tangent_frame, self.axis_points[i], self.rho,
                    half_length=self.geometry_constant, geometry_constant=self.geometry_constant)

    def index_of(self, m1: int, m2: int, j: int) -> int:
        hit = np.flatnonzero((self.indices == (m1, m2, j)).all(axis=1))
        if len(hit) == 0:
            raise KeyError((m1, m2, j))
        return int(hit[0])

    def packet(self, i: int) -> WavePacket:
        return make_model_packet(self.box, self.axis_points[i], self.rho,
                                 geometry_constant=self.geometry_constant)


def build_tube_family(box: FrequencyBox, rho: float, physical_window: float = 1.0, *,
                      transverse_window: float | None = None,
                      geometry_constant: float = GEOMETRY_CONSTANT) -> TubeFamily:
    """All lattice tubes with ``|m_i| <= window / rho`` and ``|j| <= window``.

    ``transverse_window`` overrides the transverse index bound (in physical units).
    """
    if physical_window <= 0:
        raise ContractError("physical_window must be positive")
    tw = physical_window if transverse_window is None else transverse_window
    M = int(math.floor(tw / rho + 1e-9))
    J = int(math.floor(physical_window + 1e-9))
    m = np.arange(-M, M + 1)
    jj = np.arange(-J, J + 1)
    Jg, M1, M2 = np.meshgrid(jj, m, m, indexing="ij")
    idx = np.column_stack([M1.ravel(), M2.ravel(), Jg.ravel()]).astype(np.int64)
    return TubeFamily(box, rho, idx, geometry_constant)


def tail_weight_sum(family: TubeFamily, x, N: float = DECAY_ORDER) -> np.ndarray:
    """``sum_T (1 + tube_distance(T, x))^-N`` over the family, for each row of ``x``."""
    x = np.atleast_2d(np.asarray(x, float))
    e1, e2 = family.box.tangent_frame
    v = family.direction
    C0 = family.geometry_constant
    m1, m2, j = (family.indices[:, k].astype(float) for k in range(3))
    out = np.empty(len(x))
    for i, xi in enumerate(x):
        y1, y2, s = xi @ e1 / family.rho, xi @ e2 / family.rho, xi @ v
        r = np.hypot(y1 - m1, y2 - m2)
        d = np.maximum(0.0, np.maximum(r - C0, np.abs(s - j) - C0))
        out[i] = math.fsum((1.0 + d) ** (-N))
    return out
