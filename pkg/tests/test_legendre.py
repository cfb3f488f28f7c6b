import math

import numpy as np
import pytest

from rigidlab import corpus
from rigidlab.corpus import R1, T1
from rigidlab.dsl import HamiltonianSequence, parse
from rigidlab.geometry import Box, PhasePoint, TangentPoint
from rigidlab.legendre import (LegendreConvergenceError, inverse_batch, lagrangian, lagrangian_batch,
                               legendre_inverse, legendre_map, roc_table, roundtrip_error)

FREE = parse("0.5*p1^2", T1)
PEND = parse("0.5*p1^2 + cos(q1)", T1)
COSH = parse("cosh(p1)", R1)
KS = [4, 8, 16, 32, 64, 128, 256]


def test_legendre_map_examples():
    assert legendre_map(FREE, PhasePoint([0.4], [1.3], T1)).v[0] == 1.3
    assert legendre_map(PEND, PhasePoint([0.0], [2.0], T1)).v[0] == 2.0
    assert legendre_map(COSH, PhasePoint([0.2], [1.0], R1)).v[0] == pytest.approx(math.sinh(1.0), abs=1e-15)


def test_legendre_inverse_examples():
    r = legendre_inverse(FREE, TangentPoint([0.0], [3.0], T1))
    assert r.p_star[0] == pytest.approx(3.0, abs=1e-12) and r.L_value == pytest.approx(4.5, abs=1e-12)
    assert r.residual <= 1e-10
    assert lagrangian(PEND, TangentPoint([0.0], [2.0], T1)) == pytest.approx(1.0, abs=1e-12)


def test_cosh_inverse_against_grid_search():
    r = legendre_inverse(COSH, TangentPoint([0.0], [1.0], R1))
    # independent oracle: brute-force sup of p v - cosh(p) on a fine grid
    p = np.arange(-5.0, 5.0 + 1e-12, 1e-4)
    vals = p * 1.0 - np.cosh(p)
    i = int(np.argmax(vals))
    assert r.p_star[0] == pytest.approx(p[i], abs=1e-4)
    assert r.L_value == pytest.approx(vals[i], abs=1e-8)
    assert r.p_star[0] == pytest.approx(math.asinh(1.0), abs=1e-10)
    assert r.L_value == pytest.approx(math.asinh(1.0) - math.sqrt(2.0), abs=1e-10)


def test_non_convergence_raises():
    with pytest.raises(LegendreConvergenceError):
        inverse_batch(COSH, np.zeros((1, 1)), np.array([[50.0]]), max_iter=3)


@pytest.mark.parametrize("v", [-1.0, 0.0, 2.0])
def test_free_lagrangian(v):
    assert lagrangian(FREE, TangentPoint([0.1], [v], T1)) == pytest.approx(0.5 * v * v, abs=1e-12)


@pytest.mark.parametrize("name", list(corpus.HAMILTONIANS))
def test_fiber_gradient_of_lagrangian(name, rng):
    H = corpus.hamiltonian(name)
    n, h = H.dim, 1e-5
    q = rng.uniform(0, 2 * math.pi, (20, n))
    v = rng.uniform(-1.5, 1.5, (20, n))
    _, p = lagrangian_batch(H, q, v)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        fd = (lagrangian_batch(H, q, v + e)[0] - lagrangian_batch(H, q, v - e)[0]) / (2 * h)
        assert np.allclose(fd, p[:, i], atol=1e-6)
    L, _ = lagrangian_batch(H, q, v)
    young = L + H.value(q, p) - np.sum(p * v, axis=-1)
    assert np.max(np.abs(young)) <= 1e-10
    second = (lagrangian_batch(H, q, v + h * 100)[0] - 2 * L + lagrangian_batch(H, q, v - h * 100)[0])
    assert np.all(second >= -1e-8)


@pytest.mark.parametrize("name", list(corpus.HAMILTONIANS))
def test_roundtrip(name):
    H = corpus.hamiltonian(name)
    assert roundtrip_error(H, corpus.default_box(H)) <= 1e-8


def test_roc_oscillating():
    seq = corpus.sequence("oscillating")
    t = roc_table(seq, corpus.default_box(seq.limit), KS)
    assert [r.k for r in t.rows] == KS
    # sampled sup of |sin(k q)|/k on the grid + random points
    assert np.allclose(t.column("sup_F_dev"), 1.0 / np.array(KS), rtol=1e-4)
    assert np.all(t.column("sup_F_dev") <= 1.0 / np.array(KS) + 1e-12)
    assert np.all(t.column("sup_dFp_dev") == 0.0)


def test_roc_fiber_oscillating():
    seq = corpus.sequence("fiber-oscillating")
    t = roc_table(seq, corpus.default_box(seq.limit), KS)
    dfp = t.column("sup_dFp_dev")
    # symbolic bound |(1/k) sin(k q) cos(p)| <= 1/k
    assert np.all(dfp <= 1.0 / np.array(KS) + 1e-12)
    assert np.all(np.diff(dfp) < 0)
    assert dfp[-1] < dfp[0] / 5
    linv = t.column("sup_Linv_dev")
    assert linv[-1] < linv[0] / 5


def test_roc_constant_sequence():
    seq = HamiltonianSequence.constant(PEND)
    t = roc_table(seq, corpus.default_box(PEND), [4, 16])
    for c in t.HEADER[1:]:
        assert np.all(t.column(c) == 0.0)


def test_roc_csv(tmp_path):
    seq = corpus.sequence("oscillating")
    t = roc_table(seq, corpus.default_box(seq.limit), [4, 8])
    t.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "k,sup_F_dev,sup_dFp_dev,sup_Linv_dev,sup_L_dev" and len(lines) == 3


def test_roc_rejects_non_tonelli():
    from rigidlab.dsl import NotTonelliError
    seq = HamiltonianSequence.parse("0.5*p1^2 - (1/k)*p1^4", "0.5*p1^2", T1)
    with pytest.raises(NotTonelliError):
        roc_table(seq, Box.around(T1, 2.0), [1, 2])
