from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from tracelab.estimators import fiber_multiplicity
from tracelab.fitting import fit_loglog
from tracelab.frequency import partition_weights, tile_annulus
from tracelab.packets import Tube, build_tube_family, dilate_transverse, tube_distance
from tracelab.square_function import PacketSum, square_function
from tracelab.surface import QuadraticSurface

coord = st.floats(-0.5, 0.5, allow_nan=False)
curv = st.floats(0.25, 4.0, allow_nan=False)
unit3 = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3).filter(
    lambda t: np.linalg.norm(t) > 1e-3).map(lambda t: np.array(t) / np.linalg.norm(t))


@lru_cache(maxsize=None)
def _tiling(R):
    T = tile_annulus(R)
    return T, partition_weights(T)


@given(coord, coord, curv, curv)
def test_normal_is_unit_and_orthogonal(u1, u2, l1, l2):
    s = QuadraticSurface(l1, l2)
    u = np.array([[u1, u2]])
    n = s.normal(u)[0]
    assert abs(np.linalg.norm(n) - 1) <= 1e-12
    tangents = np.array([[1, 0, l1 * u1], [0, 1, l2 * u2]])
    assert np.abs(tangents @ n).max() <= 1e-12


@given(coord, coord, unit3)
def test_tangency_odd_and_bounded(u1, u2, v):
    s = QuadraticSurface()
    u = np.array([[u1, u2]])
    h = s.tangency_values(u, v)[0]
    assert abs(h) <= 1 + 1e-12
    assert s.tangency_values(u, -v)[0] == -h


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([16, 64, 256]), unit3, st.floats(-0.75, 0.75))
def test_partition_of_unity(R, d, dr):
    _, W = _tiling(R)
    assert abs(W.total((R + dr) * d[None, :])[0] - 1) <= 1e-8


@given(unit3, st.tuples(*[st.floats(-2, 2, allow_nan=False)] * 3))
def test_fiber_multiplicity_at_most_two(v, z):
    assert fiber_multiplicity(QuadraticSurface(), v, np.array(z)) <= 2


@given(st.floats(-3, 3), st.floats(0.01, 100), st.floats(-1, 1))
def test_fit_invariances(slope, scale, shift):
    xs = [2.0**k for k in range(5)]
    ys = [scale * x**slope for x in xs]
    fit = fit_loglog(list(zip(xs, ys)))
    assert abs(fit.slope - slope) <= 1e-9
    moved = fit_loglog([(x, y * 2**shift) for x, y in zip(xs, ys)])
    assert abs(moved.slope - fit.slope) <= 1e-9


@given(unit3, st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3), st.integers(0, 4))
def test_tube_distance_and_dilation(v, x, k):
    t = Tube.through(np.zeros(3), v, 1 / 16)
    x = np.array(x)[None, :]
    d = tube_distance(t, x)[0]
    assert d >= 0
    assert (d == 0) == bool(t.contains(x)[0])
    if dilate_transverse(t, k).contains(x)[0]:
        assert dilate_transverse(t, k + 1).contains(x)[0]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
                min_size=1, max_size=4),
       st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
       st.tuples(*[st.floats(-0.3, 0.3)] * 3))
def test_square_function_homogeneous_and_monotone(coefs, s, x):
    T, W = _tiling(64)
    fam = build_tube_family(T.locate(np.array([1.0, 0.0, 0.0])), 1 / 8, 0.25)
    other = build_tube_family(T.locate(np.array([0.0, 0.0, 1.0])), 1 / 8, 0.25)
    ps = PacketSum.of([fam.packet(i) for i in range(len(coefs))], coefs)
    x = np.array(x)
    g = square_function(ps, T, W, x)
    assert math.isclose(square_function(ps.scaled(s), T, W, x), abs(s) * g,
                        rel_tol=1e-9, abs_tol=1e-12)
    bigger = ps + PacketSum.of([other.packet(0)])
    assert square_function(bigger, T, W, x) >= g
