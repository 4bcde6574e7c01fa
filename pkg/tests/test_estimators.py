from __future__ import annotations

import math

import numpy as np
import pytest

from tracelab import estimators as est
from tracelab.exceptions import ContractError, DomainError
from tracelab.frequency import tile_annulus
from tracelab.packets import Tube, build_tube_family, dilate_transverse, tube_distance
from tracelab.surface import QuadraticSurface, build_quadrature

E1 = np.array([1.0, 0.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])


@pytest.fixture(scope="module")
def surface():
    return QuadraticSurface()


@pytest.fixture(scope="module")
def family():
    return build_tube_family(tile_annulus(256).locate(E1), 1 / 16, 0.5)


def test_fiber_multiplicity_examples(surface):
    assert est.fiber_multiplicity(surface, E3, np.array([0.1, 0.1, 5.0])) == 1
    # line z + t e1 with z = (0, 0, 0.02) meets u1^2 / 2 = 0.02 at u1 = +-0.2
    assert est.fiber_multiplicity(surface, E1, np.array([0.0, 0.0, 0.02])) == 2
    u, ok = est.fiber_parameters(surface, E1, np.array([0.0, 0.0, 0.02]))
    np.testing.assert_allclose(np.sort(u[0, :, 0]), [-0.2, 0.2], atol=1e-15)
    assert est.fiber_multiplicity(surface, E1, np.array([0.0, 0.0, -0.02])) == 0


def test_fiber_multiplicity_random_bound(surface):
    rng = np.random.default_rng(0)
    dirs = est.random_relevant_directions(surface, 100, seed=1)
    worst = 0
    for v in dirs:
        z = surface.chart(rng.uniform(-0.5, 0.5, size=(100, 2)))
        worst = max(worst, int(est.fiber_multiplicity(surface, v, z).max()))
    assert worst <= 2


def test_multiplicity_audit(surface):
    worst, bad, total = est.multiplicity_audit(surface, 2.0**-8, n_directions=20,
                                               per_direction=50)
    assert worst <= 2 and bad == 0 and total > 500


def test_tangency_gradient_floor(surface):
    # along u1 = 0 the gradient of -u1 / J has length 1 / sqrt(1 + u2^2)
    assert est.tangency_gradient_floor(surface, directions=[E1]) >= 1 / math.sqrt(1.25) - 1e-6
    assert est.tangency_gradient_floor(surface, 200) > 0.5
    assert est.tangency_gradient_floor(QuadraticSurface(2.0, 3.0), 200) > 0.5


def test_tangency_curve_speed(surface):
    assert est.tangency_curve_speed_floor(surface, E1) == pytest.approx(1.0, abs=1e-8)
    v = np.array([1.0, 1.0, 0.0]) / math.sqrt(2)
    assert est.tangency_curve_speed_floor(surface, v) >= 1.0 - 1e-8
    with pytest.raises(DomainError):
        est.tangency_curve_speed_floor(surface, E3)


def test_extreme_tube_mass_contracts(surface):
    t = Tube.through(np.zeros(3), E1, 2.0**-8)
    with pytest.raises(ContractError):
        est.extreme_tube_mass(surface, E1, 0.5, t)
    with pytest.raises(ContractError):
        est.extreme_tube_mass(surface, np.array([0.0, 1.0, 0.0]), 2.0**-8, t)


def test_tail_mass_tends_to_extreme_mass(surface):
    rho = 2.0**-8
    t = Tube.through(np.zeros(3), E1, rho)
    m = est.extreme_tube_mass(surface, E1, rho, t, cells=512).value
    w = est.tail_weighted_extreme_mass(surface, E1, rho, t, 200, window=4, cells=512)
    assert w.value == pytest.approx(m, rel=0.02)
    assert w.value >= m * (1 - 1e-3)
    with pytest.raises(ContractError):
        est.tail_weighted_extreme_mass(surface, E1, rho, t, 2)


def test_tail_mass_matches_global_quadrature(surface):
    rho = 2.0**-8
    t = Tube.through(np.zeros(3), E1, rho)
    q = build_quadrature(surface, 2048, node_budget=10**7)
    h = np.abs(surface.tangency_values(q.u, E1)) <= math.sqrt(rho)
    ref = float(np.sum(q.weights * h * (1 + tube_distance(t, q.x)) ** -3.0))
    w = est.tail_weighted_extreme_mass(surface, E1, rho, t, 3, cells=512)
    assert w.value == pytest.approx(ref, rel=5e-3)


def test_sublevel_mass_limits(surface):
    rho = 2.0**-8
    t = Tube.through(np.zeros(3), E1, rho)
    m = est.extreme_tube_mass(surface, E1, rho, t, cells=512).value
    low = est.sublevel_mass(surface, E1, rho, t, rho, cells=512).value
    assert m / 4 <= low <= 4 * m
    # a quarter-scale tube holds the whole strip
    sat = est.sublevel_mass(surface, E1, rho, t, 0.25, cells=512).value
    assert sat == pytest.approx(est.strip_mass(surface, E1, rho).value, rel=1e-3)
    with pytest.raises(ContractError):
        est.sublevel_mass(surface, E1, rho, t, rho / 2)


def test_strip_mass_matches_global_quadrature(surface):
    rho = 2.0**-6
    q = build_quadrature(surface, 2048, node_budget=10**7)
    h = np.abs(surface.tangency_values(q.u, E1)) <= math.sqrt(rho)
    ref = float(np.sum(q.weights * h))
    assert est.strip_mass(surface, E1, rho).value == pytest.approx(ref, rel=2e-3)


def test_packet_energy_regions(surface, family):
    p = family.packet(family.index_of(0, 0, 0))
    assert est.packet_energy(surface, p, "empty").value == 0.0
    ext = est.packet_energy(surface, p, "extreme").value
    out = est.packet_energy(surface, p, "outside_extreme").value
    full = est.packet_energy(surface, p, "all").value
    # separate windows per region, so additivity holds to quadrature accuracy
    assert ext + out == pytest.approx(full, rel=2e-3)
    q = build_quadrature(surface, 512)
    parts = [est.single_packet_energy(p, q, r) for r in ("extreme", "outside_extreme", "all")]
    assert parts[0] + parts[1] == pytest.approx(parts[2], rel=1e-12)
    with pytest.raises(ContractError):
        est.packet_energy(surface, p, "nowhere")


def test_schur_kernel_symmetric(surface, family):
    i = family.index_of(0, 0, 0)
    j = family.index_of(1, 0, 0)
    a = est.schur_kernel_entry(family, i, (1, 0, 0), surface, family.rho)
    b = est.schur_kernel_entry(family, j, (0, 0, 0), surface, family.rho)
    assert a == pytest.approx(b, rel=1e-9)


def test_schur_row_diagonal(surface, family):
    i = family.index_of(0, 0, 0)
    row = est.schur_row_sum(family, i, surface, E1, family.rho)
    diag = est.schur_kernel_entry(family, i, (0, 0, 0), surface, family.rho)
    assert row.diagonal == pytest.approx(diag, rel=1e-9)
    assert row.value >= abs(row.diagonal)
    assert row.tail_bound > 0
    assert row.terms == (2 * est.SCHUR_TRANSVERSE + 1) ** 2 * (2 * est.SCHUR_LONGITUDINAL + 1)
    with pytest.raises(ContractError):
        est.schur_row_sum(family, i, surface, E1, family.rho / 2)


def test_pushforward_vertical_disc(surface):
    # projecting along e3 gives int_{|u| <= r} J du = 2 pi ((1 + r^2)^(3/2) - 1) / 3
    r = 0.1
    exact = 2 * math.pi * ((1 + r * r) ** 1.5 - 1) / 3
    m = est.pushforward_ball_mass(surface, E3, np.zeros(3), r, cells=512)
    assert m.value == pytest.approx(exact, rel=1e-3)
    with pytest.raises(ContractError):
        est.pushforward_ball_mass(surface, E3, np.zeros(3), r, ("inside", 0.1))


def test_projected_density_vertical(surface):
    w = np.array([[0.1, 0.2, 0.0]])
    # h_{e3} = 1 / J and density 1 there, so the fiber density is J
    assert est.projected_density(surface, E3, w)[0] == pytest.approx(math.sqrt(1.05), rel=1e-12)


def test_hyperbolic_generator_mass_linear():
    a = est.hyperbolic_generator_mass(2.0**-8, cells=1024).value
    b = est.hyperbolic_generator_mass(2.0**-10, cells=1024).value
    assert math.log2(a / b) / 2 == pytest.approx(1.0, abs=0.1)


def test_overlap_counts_match_brute_force(family):
    rng = np.random.default_rng(3)
    x = rng.uniform(-0.3, 0.3, size=(40, 3))
    for k in (0, 1, 2):
        brute = np.zeros(len(x), dtype=int)
        for i in range(len(family)):
            brute += dilate_transverse(family.tube(i), k).contains(x)
        np.testing.assert_array_equal(est.overlap_counts(family, x, k), brute)


def test_max_overlap_grows_with_dilation(family):
    m = est.max_overlap(family, [0, 1, 2], n_samples=2000)
    assert m[0] < m[1] < m[2]


def test_extreme_mass_vanishes_for_vertical_direction(surface):
    t = Tube.through(np.zeros(3), E3, 2.0**-8)
    assert est.extreme_tube_mass(surface, E3, 2.0**-8, t, cells=256).value == 0.0


def test_extreme_mass_matches_fine_global_rule(surface):
    rho = 2.0**-6
    t = Tube.through(np.zeros(3), E1, rho)
    q = build_quadrature(surface, 4096, node_budget=2 * 10**7)
    inside = t.contains(q.x) & (np.abs(surface.tangency_values(q.u, E1)) <= math.sqrt(rho))
    ref = float(np.sum(q.weights * inside))
    m = est.extreme_tube_mass(surface, E1, rho, t, cells=1024)
    assert m.value > 0
    assert m.value == pytest.approx(ref, rel=5e-3)


def test_tail_weight_dominates_untailed_mass(surface):
    rho = 2.0**-8
    t = Tube.through(np.zeros(3), E1, rho)
    m = est.extreme_tube_mass(surface, E1, rho, t, cells=512)
    w = est.tail_weighted_extreme_mass(surface, E1, rho, t, 3, cells=512)
    assert w.value >= m.value - m.uncertainty - w.uncertainty


def test_sublevel_mass_monotone_in_sigma(surface):
    rho = 2.0**-8
    t = Tube.through(np.zeros(3), E1, rho)
    vals = [est.sublevel_mass(surface, E1, rho, t, s, cells=512).value
            for s in (2.0**-6, 2.0**-5, 2.0**-4, 2.0**-3)]
    assert vals == sorted(vals)


def test_gradient_floor_scales_with_curvature():
    # on the e1 tangency line u1 = 0: |grad h| = lam / sqrt(1 + lam^2 u2^2), least at |u2| = 1/2
    floors = []
    for lam in (0.5, 1.0, 2.0):
        f = est.tangency_gradient_floor(QuadraticSurface(lam, lam), directions=[E1])
        assert f >= lam / math.sqrt(1 + lam * lam / 4) - 1e-6
        floors.append(f)
    assert floors == sorted(floors)


def test_pushforward_conserves_total_mass(surface):
    q = build_quadrature(surface, 256)
    for v in (E1, E3, np.array([0.6, 0.0, 0.8])):
        m = est.pushforward_ball_mass(surface, v, np.zeros(3), 10.0, quadrature=q)
        assert m.value == pytest.approx(q.total_mass(), abs=1e-10)


def test_schur_diagonal_is_pivot_strip_energy(surface, family):
    i = family.index_of(0, 0, 0)
    diag = est.schur_kernel_entry(family, i, (0, 0, 0), surface, family.rho)
    energy = est.packet_energy(surface, family.packet(i), "extreme")
    assert diag == pytest.approx(energy.value, rel=0.01)
