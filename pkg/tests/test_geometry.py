import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rigidlab.geometry import (Box, DiscretizedArc, GridMismatchError, ManifoldSpec, NodeKind,
                               PhasePoint, arc_distance_C0, arc_distance_L2, reduce)

T1 = ManifoldSpec.torus(1)
R1 = ManifoldSpec.euclidean(1)
finite = st.floats(-50, 50, allow_nan=False)


def const_arc(q, p=0.0, m=T1, N=11, t1=1.0, kind=NodeKind.PHASE):
    return DiscretizedArc(0.0, t1, np.full(N, q), np.full(N, p), kind, m)


def test_reduce_examples():
    r, w = reduce([7.0], T1)
    assert r[0] == pytest.approx(7.0 - 2 * math.pi, abs=1e-15)
    assert r[0] == pytest.approx(0.7168, abs=1e-4)
    assert w[0] == 1
    r, w = reduce([0.0], T1)
    assert r[0] == 0.0 and w[0] == 0
    r, w = reduce([-1.5], R1)
    assert r[0] == -1.5 and w[0] == 0


def test_reduce_dimension_mismatch():
    with pytest.raises(ValueError):
        reduce([1.0, 2.0], T1)


def test_manifold_validation():
    with pytest.raises(ValueError):
        ManifoldSpec.torus(3)
    with pytest.raises(ValueError):
        ManifoldSpec.torus(1, [0.0])
    m = ManifoldSpec.from_config({"manifold": "torus", "dim": 1, "periods": [6.283185307179586]})
    assert m == T1


def test_phase_point_reduces_on_torus():
    x = PhasePoint([7.0], [1.0], T1)
    assert 0 <= x.q[0] < 2 * math.pi


def test_c0_examples():
    assert arc_distance_C0(const_arc(0.3), const_arc(0.3)) == 0.0
    assert arc_distance_C0(const_arc(0.0), const_arc(0.1)) == pytest.approx(0.1, abs=1e-15)
    assert arc_distance_C0(const_arc(0.0), const_arc(6.0)) == pytest.approx(2 * math.pi - 6.0, abs=1e-14)


def test_l2_examples():
    a, b = const_arc(0.0, 0.0, R1, t1=2.0), const_arc(0.0, 0.7, R1, t1=2.0)
    assert arc_distance_L2(a, a) == 0.0
    assert arc_distance_L2(a, b) == pytest.approx(0.7 * math.sqrt(2.0), rel=1e-14)
    t = np.linspace(0, 2 * math.pi, 2001)
    s = DiscretizedArc(0.0, 2 * math.pi, t * 0, np.sin(t), NodeKind.PHASE, R1)
    z = DiscretizedArc(0.0, 2 * math.pi, t * 0, t * 0, NodeKind.PHASE, R1)
    # independent oracle: the closed-form integral of sin^2 over a period
    assert arc_distance_L2(s, z) == pytest.approx(math.sqrt(math.pi), rel=1e-10)


def test_grid_mismatch():
    with pytest.raises(GridMismatchError):
        arc_distance_C0(const_arc(0.0, N=11), const_arc(0.0, N=12))


def test_box_sampling_is_deterministic():
    box = Box.around(T1, 2.0)
    a = box.sample(8, 50, seed=3)
    b = box.sample(8, 50, seed=3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    q, p = a
    assert np.all((q >= 0) & (q <= 2 * math.pi)) and np.all(np.abs(p) <= 2.0)


@given(st.lists(finite, min_size=1, max_size=2))
def test_reduce_idempotent(q):
    m = ManifoldSpec.torus(len(q))
    r, w = reduce(q, m)
    r2, w2 = reduce(r, m)
    assert np.array_equal(r, r2) and not np.any(w2)
    assert np.allclose(r + w * m.period_array, q, atol=1e-12)


def _arc(vals, m):
    v = np.asarray(vals, dtype=float)
    return DiscretizedArc(0.0, 1.5, v, v[::-1].copy(), NodeKind.PHASE, m)


arrays = st.lists(finite, min_size=6, max_size=6)


@settings(max_examples=60)
@given(arrays, arrays, arrays, st.sampled_from([T1, R1]))
def test_distances_are_metrics(a, b, c, m):
    A, B, C = _arc(a, m), _arc(b, m), _arc(c, m)
    for d in (arc_distance_C0, lambda x, y: arc_distance_L2(x, y, "fiber"),
              lambda x, y: arc_distance_L2(x, y, "base")):
        assert d(A, B) == d(B, A)
        assert d(A, C) <= d(A, B) + d(B, C) + 1e-12


@settings(max_examples=60)
@given(arrays, arrays, st.sampled_from([T1, R1]))
def test_l2_below_sqrt_length_times_sup(a, b, m):
    A, B = _arc(a, m), _arc(b, m)
    assert arc_distance_L2(A, B, "base") <= math.sqrt(1.5) * arc_distance_C0(A, B) + 1e-12
