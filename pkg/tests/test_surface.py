from __future__ import annotations

import math

import numpy as np
import pytest

from tracelab.exceptions import ContractError, DomainError, EvaluationError, ResourceError
from tracelab.surface import (QuadraticSurface, RefinementWindow, build_quadrature, chart_map,
                              extreme_strip_member, integrate, merge_windows, tangency,
                              tangency_line, window_quadrature)

E1 = np.array([1.0, 0.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])

# mpmath double quadrature of sqrt(1 + u1^2 + u2^2) over [-1/2, 1/2]^2
AREA_U0 = 1.07903701644153415703911023479
# closed form of int |u1| chi(u) du for the default density (h_{e1} J = -u1)
ABS_H_E1_MASS = 0.182571428571428571428571428571
# brentq root of u / sqrt(1 + u^2) = 0.1
STRIP_BOUNDARY_RHO_001 = 0.10050378152592122


def test_chart_map_origin():
    p = chart_map(QuadraticSurface(), (0.0, 0.0))
    np.testing.assert_array_equal(p.x, [0.0, 0.0, 0.0])
    np.testing.assert_array_equal(p.normal, [0.0, 0.0, 1.0])
    assert p.area_weight == 1.0
    assert p.density == 1.0


def test_chart_map_unit_offset():
    p = chart_map(QuadraticSurface(), (1.0, 0.0))
    np.testing.assert_allclose(p.normal, np.array([-1.0, 0.0, 1.0]) / math.sqrt(2), rtol=1e-15)
    assert p.area_weight == pytest.approx(math.sqrt(2), rel=1e-15)
    assert p.x[2] == 0.5


def test_chart_map_matches_finite_difference_cross_product():
    s = QuadraticSurface(2.0, 3.0)
    u = np.array([0.1, 0.2])
    h = 1e-6
    d1 = (s.chart(u + [h, 0]) - s.chart(u - [h, 0])) / (2 * h)
    d2 = (s.chart(u + [0, h]) - s.chart(u - [0, h])) / (2 * h)
    n = np.cross(d1, d2)
    p = chart_map(s, u)
    np.testing.assert_allclose(p.normal, n / np.linalg.norm(n), atol=1e-9)
    assert p.area_weight == pytest.approx(np.linalg.norm(n), rel=1e-9)


def test_chart_map_outside_chart():
    with pytest.raises(DomainError):
        chart_map(QuadraticSurface(), (1.5, 0.0))


def test_tangency_examples():
    s = QuadraticSurface()
    assert tangency(s, (0.0, 0.0), E3) == 1.0
    for u2 in np.linspace(-0.9, 0.9, 7):
        assert tangency(s, (0.0, u2), E1) == 0.0
    assert tangency(s, (0.09, 0.0), E1) == pytest.approx(-0.09 / math.sqrt(1.0081), rel=1e-14)


def test_tangency_rejects_non_unit():
    with pytest.raises(ContractError):
        tangency(QuadraticSurface(), (0.0, 0.0), np.array([1.0, 1e-3, 0.0]))


def test_extreme_strip_membership():
    s = QuadraticSurface()
    assert extreme_strip_member(s, (0.0, 0.3), E1, 1e-6)
    assert not extreme_strip_member(s, (0.0, 0.0), E3, 0.01)
    b = STRIP_BOUNDARY_RHO_001
    assert extreme_strip_member(s, (b - 1e-9, 0.0), E1, 0.01)
    assert not extreme_strip_member(s, (b + 1e-9, 0.0), E1, 0.01)
    with pytest.raises(ContractError):
        extreme_strip_member(s, (0.0, 0.0), E1, 0.0)


def test_tangency_lines():
    s = QuadraticSurface()
    line = tangency_line(s, E1)
    pts = line.points(100)
    np.testing.assert_array_equal(pts[:, 0], 0.0)
    assert line.length == pytest.approx(1.0)
    assert tangency_line(s, E3) is None
    v = np.array([1.0, 1.0, 0.0]) / math.sqrt(2)
    diag = tangency_line(s, v).points(100)
    np.testing.assert_allclose(diag.sum(axis=1), 0.0, atol=1e-15)
    assert tangency_line(s, v).length == pytest.approx(math.sqrt(2))


def test_tangency_line_vanishing():
    s = QuadraticSurface(2.0, 3.0)
    rng = np.random.default_rng(3)
    seen = 0
    for _ in range(200):
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        line = tangency_line(s, v)
        if line is None:
            continue
        seen += 1
        assert np.abs(s.tangency_values(line.points(100), v)).max() <= 1e-12
    assert seen > 20


def test_comparability_window():
    s = QuadraticSurface()
    rng = np.random.default_rng(0)
    u = rng.uniform(-0.2, 0.2, size=(5000, 2))
    u = u[(np.hypot(*u.T) <= 0.2) & (np.abs(u[:, 0]) > 1e-9)]
    ratio = np.abs(s.tangency_values(u, E1)) / np.abs(u[:, 0])
    assert ratio.min() >= 0.9 and ratio.max() <= 1.0


def test_hyperbolic_needs_contrast_flag():
    with pytest.raises(ContractError):
        QuadraticSurface(1.0, -1.0)
    assert not QuadraticSurface(1.0, -1.0, contrast=True).elliptic


def test_density_profile():
    s = QuadraticSurface()
    assert s.density(np.array([0.4, -0.4])) == 1.0
    assert s.density(np.array([0.5, 0.0])) == 0.0
    assert 0 < s.density(np.array([0.45, 0.0])) < 1


def test_quadrature_jacobian_mass():
    q = build_quadrature(QuadraticSurface(), 512)
    assert math.fsum(q.cell_area * q.area_weight) == pytest.approx(AREA_U0, rel=1e-3)


def test_quadrature_flat_area():
    q = build_quadrature(QuadraticSurface(), 64, [RefinementWindow((-0.1, 0.1), (-0.2, 0.3),
                                                                  1 / 500, 1 / 300)])
    assert math.fsum(q.cell_area) == pytest.approx(1.0, abs=1e-12)


def test_quadrature_self_convergence():
    s = QuadraticSurface()
    a = build_quadrature(s, 128).total_mass()
    b = build_quadrature(s, 256).total_mass()
    assert abs(a - b) <= 1e-4 * b


def test_integrate_examples():
    s = QuadraticSurface()
    q = build_quadrature(s, 256)
    assert integrate(q, lambda qq: np.ones(len(qq))) == pytest.approx(q.total_mass(), rel=1e-15)
    half = integrate(q, lambda qq: (qq.u[:, 0] > 0).astype(float))
    assert half == pytest.approx(0.5 * q.total_mass(), rel=1e-12)
    val = integrate(q, lambda qq: np.abs(s.tangency_values(qq.u, E1)))
    assert val == pytest.approx(ABS_H_E1_MASS, rel=5e-3)
    fine_q = build_quadrature(s, 2560, node_budget=10**7)
    fine = integrate(fine_q, lambda qq: np.abs(s.tangency_values(qq.u, E1)))
    assert val == pytest.approx(fine, rel=5e-3)


def test_integrate_chunking_is_bitwise_invariant():
    q = build_quadrature(QuadraticSurface(), 100)
    g = lambda qq: np.sin(7 * qq.x[:, 0]) + qq.x[:, 2]
    ref = integrate(q, g)
    for chunk in (1, 17, 1000, 10**6):
        assert integrate(q, g, chunk_size=chunk) == ref


def test_integrate_reports_nonfinite_node():
    q = build_quadrature(QuadraticSurface(), 16)
    with pytest.raises(EvaluationError, match="node 5"):
        integrate(q, lambda qq: np.where(np.arange(len(qq)) == 5, np.nan, 1.0))


def test_window_errors():
    s = QuadraticSurface()
    with pytest.raises(DomainError):
        build_quadrature(s, 32, [RefinementWindow((0.4, 0.6), (0.0, 0.1), 0.01, 0.01)])
    with pytest.raises(ResourceError):
        build_quadrature(s, 32, [RefinementWindow((-0.5, 0.5), (-0.5, 0.5), 1e-4, 1e-4)])
    with pytest.raises(ContractError):
        build_quadrature(s, 8)


def test_overlapping_windows_merge():
    a = RefinementWindow((0.0, 0.2), (0.0, 0.2), 0.01, 0.02)
    b = RefinementWindow((0.1, 0.3), (0.1, 0.3), 0.02, 0.01)
    merged = merge_windows([a, b])
    assert len(merged) == 1
    assert merged[0].u1 == (0.0, 0.3) and merged[0].h1 == 0.01 and merged[0].h2 == 0.01
    q = build_quadrature(QuadraticSurface(), 32, [a, b])
    assert math.fsum(q.cell_area) == pytest.approx(1.0, abs=1e-12)


def test_window_quadrature_matches_global_rule():
    s = QuadraticSurface()
    rho = 2.0**-6
    half = math.sqrt(rho)

    def pred(c, hd):
        return np.abs(s.tangency_values(c, E1)) <= half + s.tangency_lipschitz * hd
    q = window_quadrature(s, pred, half / 4, 256)
    g = lambda qq: (np.abs(s.tangency_values(qq.u, E1)) <= half).astype(float)
    ref = integrate(build_quadrature(s, 2048, node_budget=10**7), g)
    assert integrate(q, g) == pytest.approx(ref, rel=2e-3)


def test_quadrature_csv(tmp_path):
    q = build_quadrature(QuadraticSurface(), 16)
    q.to_csv(tmp_path / "nodes.csv")
    data = np.loadtxt(tmp_path / "nodes.csv", delimiter=",", skiprows=1)
    assert data.shape == (len(q), 6)
    np.testing.assert_array_equal(data[:, 5], q.weights)
