"""Box components, the angular square function and trace norms of packet sums.

Inputs are finite sums of model packets whose Fourier supports sit inside
the plateau of their own box. For such a packet the box-localized piece is
the packet itself in its own box and zero in every other box, so the
square function is evaluated without any Fourier transform at scale ``R``.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .exceptions import UnsupportedInputError
from .frequency import (AnnulusTiling, BoxClass, FrequencyBox, PartitionWeight, TAU0_DEFAULT,
                        classify_box)
from .packets import WavePacket, frequency_support_samples
from .surface import SurfaceQuadrature, integrate


@dataclass(frozen=True, eq=False)
class PacketSum:
    """Finite sum ``sum c_T phi_T``; each packet is owned by the box it was built in."""

    terms: tuple[tuple[complex, WavePacket], ...]

    def __post_init__(self):
        for _, p in self.terms:
            if p.box is None:
                raise UnsupportedInputError("packet has no owning box")
            if not p.box.in_plateau(p.carrier[None, :])[0]:
                raise UnsupportedInputError("packet carrier lies outside the plateau of its box")
        object.__setattr__(self, "terms", tuple((complex(c), p) for c, p in self.terms))

    @classmethod
    def of(cls, packets, coefficients=None) -> "PacketSum":
        packets = list(packets)
        if coefficients is None:
            coefficients = np.ones(len(packets))
        return cls(tuple(zip(coefficients, packets)))

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([c for c, _ in self.terms], dtype=complex)

    @property
    def owners(self) -> list[int]:
        return [p.box.index for _, p in self.terms]

    def boxes(self) -> dict[int, FrequencyBox]:
        return {p.box.index: p.box for _, p in self.terms}

    def restrict(self, box_index: int) -> "PacketSum":
        return PacketSum(tuple(t for t in self.terms if t[1].box.index == box_index))

    def scaled(self, s: complex) -> "PacketSum":
        return PacketSum(tuple((s * c, p) for c, p in self.terms))

    def __add__(self, other: "PacketSum") -> "PacketSum":
        return PacketSum(self.terms + other.terms)


def _check_ownership(packet_sum: PacketSum, partition: PartitionWeight | None) -> None:
    """Each packet's Fourier support must see weight exactly 1 from its own box."""
    if partition is None:
        return
    for _, p in packet_sum.terms:
        pts = frequency_support_samples(p, 16)
        w = partition.weight(p.box, pts)
        if not np.all(w == 1.0):
            raise UnsupportedInputError(
                f"packet support is not in the plateau of box {p.box.index} "
                f"(min weight {w.min():.3g}); general filtering is not supported")


def _component_values(terms, x) -> np.ndarray:
    """``sum c_T phi_T(x)``; packets sharing a carrier share one exponential."""
    x = np.asarray(x, float)
    out = np.zeros(x.shape[:-1], dtype=complex)
    groups: dict[tuple, list] = defaultdict(list)
    for c, p in terms:
        groups[tuple(p.carrier)].append((c, p))
    for carrier, group in groups.items():
        env = np.zeros(x.shape[:-1], dtype=complex)
        for c, p in group:
            env += c * p.envelope(x)
        out += env * np.exp(2j * math.pi * (x @ np.asarray(carrier)))
    return out


def box_component(packet_sum: PacketSum, box: FrequencyBox, partition: PartitionWeight | None,
                  x):
    """``f_box(x)``: the terms owned by ``box`` (the others are annihilated by its weight)."""
    _check_ownership(packet_sum, partition)
    terms = [t for t in packet_sum.terms if t[1].box.index == box.index]
    out = _component_values(terms, x)
    return complex(out) if np.ndim(out) == 0 else out


def square_function(packet_sum: PacketSum, tiling: AnnulusTiling | None,
                    partition: PartitionWeight | None, x):
    """``(sum_box |f_box(x)|^2)^(1/2)``; boxes without terms contribute 0."""
    _check_ownership(packet_sum, partition)
    x = np.asarray(x, float)
    total = np.zeros(x.shape[:-1])
    for idx in sorted(packet_sum.boxes()):
        total += np.abs(_component_values(packet_sum.restrict(idx).terms, x)) ** 2
    out = np.sqrt(total)
    return float(out) if np.ndim(out) == 0 else out


def square_function_squared_by_box(packet_sum: PacketSum, x) -> dict[int, np.ndarray]:
    return {idx: np.abs(_component_values(packet_sum.restrict(idx).terms, x)) ** 2
            for idx in sorted(packet_sum.boxes())}


def packet_gram(packets) -> np.ndarray:
    """Inner products ``<phi_T, phi_T'>`` for packets of one box with a common carrier.

    The transverse and longitudinal profile overlaps factor, and each is the
    autocorrelation of a unit profile evaluated at the axis offset.
    """
    packets = list(packets)
    if not packets:
        return np.zeros((0, 0))
    p0 = packets[0]
    for p in packets[1:]:
        if p.box.index != p0.box.index or not np.array_equal(p.carrier, p0.carrier) \
                or p.rho != p0.rho:
            raise UnsupportedInputError("Gram matrix needs packets of one box with one carrier")
    v = p0.tube.direction
    centers = np.array([p.tube.center for p in packets])
    d = centers[:, None, :] - centers[None, :, :]
    ds = d @ v
    dy = np.linalg.norm(d - ds[..., None] * v, axis=-1) / p0.rho
    return p0.profile_transverse.autocorrelation(dy) * p0.profile_longitudinal.autocorrelation(ds)


def ambient_norm(packet_sum: PacketSum) -> float:
    """``||f||_{L^2(R^3)}``; distinct boxes are orthogonal since their plateaus are disjoint."""
    total = 0.0
    for idx in sorted(packet_sum.boxes()):
        sub = packet_sum.restrict(idx)
        c = sub.coefficients
        G = packet_gram([p for _, p in sub.terms])
        total += float(np.real(np.conj(c) @ G @ c))
    return math.sqrt(max(total, 0.0))


@dataclass(frozen=True)
class TraceNormResult:
    trace_norm: float
    ambient_norm: float
    per_box: dict
    converged: bool = True
    convergence_delta: float = 0.0

    @property
    def ratio(self) -> float:
        return self.trace_norm / self.ambient_norm if self.ambient_norm > 0 else 0.0


def trace_norm(packet_sum: PacketSum, quadrature: SurfaceQuadrature, tiling: AnnulusTiling | None,
               partition: PartitionWeight | None, *, coarse: SurfaceQuadrature | None = None,
               convergence_tolerance: float = 0.02) -> TraceNormResult:
    """``||G_R f||_{L^2(mu)}`` by quadrature and ``||f||_{L^2}`` from the packet Gram.

    With a ``coarse`` quadrature the relative change of the trace norm is
    recorded and the result is flagged as not converged above
    ``convergence_tolerance``.
    """
    _check_ownership(packet_sum, partition)
    per_box = {}
    for idx in sorted(packet_sum.boxes()):
        terms = packet_sum.restrict(idx).terms
        per_box[idx] = float(integrate(
            quadrature, lambda q: np.abs(_component_values(terms, q.x)) ** 2))
    tn = math.sqrt(math.fsum(per_box.values()))
    converged, delta = True, 0.0
    if coarse is not None:
        tc = math.sqrt(math.fsum(float(integrate(
            coarse, lambda q: np.abs(_component_values(packet_sum.restrict(i).terms, q.x)) ** 2))
            for i in per_box))
        delta = abs(tn - tc) / tn if tn else abs(tc)
        converged = delta <= convergence_tolerance
    return TraceNormResult(tn, ambient_norm(packet_sum), per_box, converged, delta)


@dataclass(frozen=True)
class DiagonalAudit:
    """Empirical constant of the diagonal estimate for one packet sum.

    ``constant = lhs / (rho**(beta - 2) * coefficient_energy)`` with
    ``lhs = int sum_box |f_box|^2 dmu``.
    """

    lhs: float
    coefficient_energy: float
    rho: float
    beta: float
    transversal: float
    nontransversal: float

    @property
    def constant(self) -> float:
        denom = self.rho ** (self.beta - 2) * self.coefficient_energy
        return self.lhs / denom if denom > 0 else 0.0


def diagonal_cost_audit(packet_sum: PacketSum, quadrature: SurfaceQuadrature,
                        beta_hypothesis: float, *, tau0: float = TAU0_DEFAULT) -> DiagonalAudit:
    """Left side of the diagonal estimate, split by the box classification."""
    if len(packet_sum) == 0:
        return DiagonalAudit(0.0, 0.0, 1.0, beta_hypothesis, 0.0, 0.0)
    surface = quadrature.surface
    parts = {BoxClass.TRANSVERSAL: [], BoxClass.NONTRANSVERSAL: []}
    for idx, box in sorted(packet_sum.boxes().items()):
        terms = packet_sum.restrict(idx).terms
        e = float(integrate(quadrature, lambda q: np.abs(_component_values(terms, q.x)) ** 2))
        parts[classify_box(box, surface, tau0)].append(e)
    tr = math.fsum(parts[BoxClass.TRANSVERSAL])
    nt = math.fsum(parts[BoxClass.NONTRANSVERSAL])
    rho = packet_sum.terms[0][1].rho
    energy = float(np.sum(np.abs(packet_sum.coefficients) ** 2))
    return DiagonalAudit(tr + nt, energy, rho, beta_hypothesis, tr, nt)


def seeded_unit_phases(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.exp(2j * math.pi * rng.uniform(size=n))
