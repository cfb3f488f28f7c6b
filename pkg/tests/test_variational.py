import math

import numpy as np
import pytest

from rigidlab import corpus
from rigidlab.corpus import T1
from rigidlab.dsl import HamiltonianSequence, NotTonelliError, parse
from rigidlab.geometry import DiscretizedArc, NodeKind, PhasePoint, arc_distance_C0
from rigidlab.variational import (ActionProblem, Init, action, lower_semicontinuity_probe,
                                  minimize_action, minimizer_convergence_experiment, orbit_arc,
                                  weierstrass_check)

FREE = parse("0.5*p1^2", T1)
PEND = parse("0.5*p1^2 + cos(q1)", T1)


def tangent(q, v, tau, m=T1):
    return DiscretizedArc(0.0, tau, q, v, NodeKind.TANGENT, m)


def test_action_examples():
    tau, v = 0.8, 1.3
    t = np.linspace(0, tau, 101)
    assert action(FREE, tangent(v * t, np.full_like(t, v), tau)) == pytest.approx(0.5 * v * v * tau, rel=1e-12)
    t = np.linspace(0, 1, 51)
    assert action(PEND, tangent(0 * t, 0 * t, 1.0)) == pytest.approx(-1.0, abs=1e-14)


def test_action_is_second_order():
    # Richardson oracle: errors against a fine reference shrink by ~4 per halving of h
    x0 = PhasePoint([0.5], [1.0], T1)
    ref = action(PEND, orbit_arc(PEND, x0, 1.0, 3201)[0])
    errs = [abs(action(PEND, orbit_arc(PEND, x0, 1.0, N)[0]) - ref) for N in (101, 201, 401)]
    rates = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert all(abs(r - 2.0) < 0.1 for r in rates)


def test_free_particle_geodesic():
    res = minimize_action(ActionProblem(FREE, [0.0], [1.0], 1.0))
    assert res.action == pytest.approx(0.5, abs=1e-8)
    assert np.allclose(res.arc.q[:, 0], res.arc.times, atol=1e-8)
    assert res.confined


def test_free_particle_takes_short_way():
    res = minimize_action(ActionProblem(FREE, [0.0], [6.0], 1.0))
    d = 6.0 - 2 * math.pi
    # oracle: compare the two winding classes analytically, min d^2 / (2 tau)
    assert min(0.5 * d * d, 0.5 * 36.0) == pytest.approx(0.5 * d * d)
    assert res.winding == (-1,)
    assert res.arc.q[-1, 0] - res.arc.q[0, 0] == pytest.approx(d, abs=1e-12)
    assert res.action == pytest.approx(0.5 * d * d, abs=1e-8)
    assert res.action == pytest.approx(0.0401, abs=1e-4)


def test_pendulum_orbit_recovery():
    x0 = PhasePoint([0.5], [1.0], T1)
    orbit, _ = orbit_arc(PEND, x0, 0.3, 301)
    res = minimize_action(ActionProblem(PEND, orbit.q[0], orbit.q[-1], 0.3, 301))
    assert arc_distance_C0(res.arc, orbit) <= 1e-4
    line = np.linspace(orbit.q[0], orbit.q[-1], 301)
    v = np.gradient(line, 0.3 / 300, axis=0)
    assert res.action <= action(PEND, tangent(line, v, 0.3))
    assert res.el_residual <= 50 * res.arc.h


def test_given_arc_init():
    x0 = PhasePoint([0.5], [1.0], T1)
    orbit, _ = orbit_arc(PEND, x0, 0.3, 101)
    init = np.linspace(orbit.q[0], orbit.q[-1], 101) + 0.05 * np.sin(np.linspace(0, math.pi, 101))[:, None]
    res = minimize_action(ActionProblem(PEND, orbit.q[0], orbit.q[-1], 0.3, 101, init=Init.GIVEN_ARC,
                                        init_arc=init))
    assert arc_distance_C0(res.arc, orbit) <= 1e-4


def test_problem_validation():
    with pytest.raises(ValueError):
        ActionProblem(FREE, [0.0], [1.0], 0.0)
    with pytest.raises(ValueError):
        ActionProblem(FREE, [0.0], [1.0], 1.0, N=2)
    with pytest.raises(ValueError):
        ActionProblem(FREE, [0.0], [1.0], 1.0, init="given_arc")


def test_weierstrass_examples():
    rep = weierstrass_check(FREE, PhasePoint([0.0], [1.0], T1), [0.2, 0.5, 1.0], n_samples=50)
    assert rep.largest_tau == 1.0 and all(r.passed for r in rep.rows)
    rep = weierstrass_check(PEND, PhasePoint([math.pi - 0.1], [0.0], T1), [0.1, 0.3], n_samples=50)
    assert rep.rows[0].passed and rep.largest_tau is not None
    with pytest.raises(NotTonelliError):
        weierstrass_check(parse("-0.5*p1^2", T1), PhasePoint([0.0], [1.0], T1), [0.1])


def test_lower_semicontinuity():
    x0 = PhasePoint([0.5], [1.0], T1)
    orbit, _ = orbit_arc(PEND, x0, 0.3, 301)
    A, vals = lower_semicontinuity_probe(PEND, orbit)
    assert A <= min(vals) + 1e-10


def test_minimizers_confined_on_corpus():
    for name in ("free", "pendulum", "coupled", "pendulum-2d"):
        H = corpus.hamiltonian(name)
        x0 = PhasePoint(np.full(H.dim, 0.5), np.full(H.dim, 0.8), H.manifold)
        orbit, _ = orbit_arc(H, x0, 0.2, 101)
        res = minimize_action(ActionProblem(H, orbit.q[0], orbit.q[-1], 0.2, 101))
        assert res.confined
        assert res.el_residual <= 50 * res.arc.h


def test_constant_sequence_experiment():
    seq = HamiltonianSequence.constant(PEND)
    exp = minimizer_convergence_experiment(seq, PhasePoint([0.5], [1.0], T1), [4, 16], 0.2)
    for r in exp.rows:
        assert r.sup_Q_dev <= 1e-6 and r.L2_P_dev <= 1e-5 and abs(r.action_gap) <= r.slack
        assert r.eps_hat == 0.0


def test_damped_experiment_converges_faster():
    x0 = PhasePoint([0.5], [1.0], T1)
    ks = [4, 16, 64, 256]
    osc = minimizer_convergence_experiment(corpus.sequence("oscillating"), x0, ks, 0.2)
    damp = minimizer_convergence_experiment(corpus.sequence("damped"), x0, ks, 0.2)
    assert damp.verdict.value == "pass" and osc.verdict.value == "pass"
    assert damp.shrink("sup_Q_dev") >= 5 and damp.shrink("L2_P_dev") >= 5
    assert damp.column("sup_Q_dev")[-1] < osc.column("sup_Q_dev")[-1]
