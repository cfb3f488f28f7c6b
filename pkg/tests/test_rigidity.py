import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rigidlab import corpus
from rigidlab.common import Verdict
from rigidlab.corpus import T1, T2
from rigidlab.dsl import HamiltonianSequence, parse
from rigidlab.dynamics import flow_point
from rigidlab.geometry import Box, PhasePoint
from rigidlab.rigidity import (BracketFunction, Mode, RigidityExperiment, bracket, bracket_expr,
                               bracket_values, flow_integral_identity_check, run_rigidity_experiment)

FREE = parse("0.5*p1^2", T1)
PEND = parse("0.5*p1^2 + cos(q1)", T1)
SIN = parse("sin(q1)", T1)
P1 = parse("p1", T1)
BOX = Box.around(T1, 2.0)
KS = [4, 8, 16, 32, 64, 128, 256]
X0 = PhasePoint([0.5], [1.0], T1)


def test_bracket_examples(rng):
    q, p = rng.uniform(0, 6, (50, 1)), rng.uniform(-2, 2, (50, 1))
    assert np.array_equal(bracket_values(FREE, SIN, q, p), -p[:, 0] * np.cos(q[:, 0]))
    assert np.all(bracket_values(PEND, PEND, q, p) == 0.0)
    assert bracket(FREE, SIN, PhasePoint([0.0], [2.0])) == -2.0
    b = BracketFunction(FREE, SIN)
    assert np.array_equal(b(q, p), b.expr().value(q, p))


@pytest.mark.parametrize("F,G", [("pendulum", "coupled"), ("free", "pendulum"),
                                 ("pendulum-2d", "coupled-2d")])
def test_bracket_is_derivative_along_flow_of_G(F, G, rng):
    # {F, G}(x) = d/dt F(phi_t^G x) at t = 0, the sign convention of X_H
    F, G = corpus.hamiltonian(F), corpus.hamiltonian(G)
    n, h = F.dim, 1e-4
    for _ in range(5):
        x = PhasePoint(rng.uniform(0, 6, n), rng.uniform(-1.5, 1.5, n))
        fwd = flow_point(G, x, h, dt=h / 4)
        bwd = flow_point(G, x, -h, dt=h / 4)
        fd = (F.value(*fwd) - F.value(*bwd)) / (2 * h)
        assert fd == pytest.approx(bracket(F, G, x), abs=1e-6)


def test_identity_examples():
    assert flow_integral_identity_check(PEND, PEND, X0, 1.0).residual <= 1e-10
    chk = flow_integral_identity_check(FREE, SIN, PhasePoint([0.0], [1.0], T1), 1.0)
    # closed form: both sides equal sin(1)
    assert chk.lhs == pytest.approx(math.sin(1.0), abs=1e-12)
    assert chk.integral == pytest.approx(math.sin(1.0), abs=1e-8)
    assert chk.residual <= 1e-8
    assert flow_integral_identity_check(PEND, P1, X0, 2.0).residual <= 1e-6


def test_endpoint_correction_improves_trapezoid():
    chk = flow_integral_identity_check(PEND, P1, X0, 2.0)
    assert chk.residual < chk.raw_trapezoid_residual


# -- algebra on the DSL corpus

NAMES_1D = corpus.names_on(T1)
points = st.tuples(st.floats(0, 6.2), st.floats(-2, 2))
scalars = st.floats(-3, 3)


def _at(x):
    return np.array([[x[0]]]), np.array([[x[1]]])


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(NAMES_1D), st.sampled_from(NAMES_1D), st.sampled_from(NAMES_1D),
       scalars, scalars, points)
def test_bilinearity(f1, f2, g, a, b, x):
    F1, F2, G = corpus.hamiltonian(f1), corpus.hamiltonian(f2), corpus.hamiltonian(g)
    q, p = _at(x)
    lhs = bracket_values(a * F1 + b * F2, G, q, p)
    rhs = a * bracket_values(F1, G, q, p) + b * bracket_values(F2, G, q, p)
    assert abs(lhs - rhs)[0] <= 1e-12 * max(1.0, abs(rhs[0]))


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(NAMES_1D), st.sampled_from(NAMES_1D), st.sampled_from(NAMES_1D), points)
def test_leibniz(f, g, h, x):
    F, G, H = (corpus.hamiltonian(n) for n in (f, g, h))
    q, p = _at(x)
    lhs = bracket_values(F * G, H, q, p)
    rhs = F.value(q, p) * bracket_values(G, H, q, p) + bracket_values(F, H, q, p) * G.value(q, p)
    assert abs(lhs - rhs)[0] <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from(corpus.names_on(T2)), min_size=3, max_size=3),
       st.tuples(st.floats(0, 6.2), st.floats(0, 6.2), st.floats(-2, 2), st.floats(-2, 2)))
def test_jacobi(names, x):
    F, G, H = (corpus.hamiltonian(n) for n in names)
    q, p = np.array([x[:2]]), np.array([x[2:]])
    total = (bracket_values(bracket_expr(F, G), H, q, p) + bracket_values(bracket_expr(G, H), F, q, p)
             + bracket_values(bracket_expr(H, F), G, q, p))
    assert abs(total[0]) <= 1e-8


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(corpus.names_on(T2)), st.sampled_from(corpus.names_on(T2)),
       st.tuples(st.floats(0, 6.2), st.floats(0, 6.2), st.floats(-2, 2), st.floats(-2, 2)))
def test_antisymmetry_exact(f, g, x):
    F, G = corpus.hamiltonian(f), corpus.hamiltonian(g)
    q, p = np.array([x[:2]]), np.array([x[2:]])
    assert bracket_values(F, G, q, p)[0] == -bracket_values(G, F, q, p)[0]


# -- experiments

def _experiment(F_fam, G_src, mode=Mode.TONELLI, declared=None):
    F = HamiltonianSequence.parse(F_fam, "0.5*p1^2", T1)
    G = HamiltonianSequence.parse(G_src, G_src, T1)
    return RigidityExperiment(F, G, BOX, KS, [X0], tau=0.2, T=1.0, mode=mode,
                              declared_bracket_limit=parse(declared, T1) if declared else None)


def test_flagship_instance():
    rep = run_rigidity_experiment(_experiment("0.5*p1^2 + (1/k)*sin(k*q1)", "sin(q1)",
                                              declared="-p1*cos(q1)"))
    assert rep.hypotheses_met
    assert rep.conclusion_sup <= 1e-8
    assert rep.verdict is Verdict.PASS, [f for f in rep.findings if f.verdict is not Verdict.PASS]
    for row in rep.hypothesis_rows:
        # the bracket perturbation vanishes identically for this pair
        assert row["sup_bracket_dev"] == 0.0


def test_g_p1_variant_is_not_met():
    rep = run_rigidity_experiment(_experiment("0.5*p1^2 + (1/k)*sin(k*q1)", "p1"))
    assert not rep.hypotheses_met
    assert rep.verdict is Verdict.NOT_MET
    assert all(r["sup_bracket_dev"] >= 1.0 - 1e-6 for r in rep.hypothesis_rows)
    concl = [f for f in rep.findings if f.section == "conclusion"]
    assert concl and all(f.verdict is Verdict.NOT_MET for f in concl)


def test_c1_mode_instance():
    rep = run_rigidity_experiment(_experiment("0.5*p1^2 + (1/k)*sin(q1)", "sin(q1)", mode=Mode.C1))
    assert rep.hypotheses_met and rep.conclusion_sup <= 1e-8
    assert rep.verdict is Verdict.PASS


def test_shipped_instances_consistent():
    from rigidlab.config import shipped_configs, load
    for name, path in shipped_configs().items():
        cfg = load(path)
        if cfg.G_seq is None:
            continue
        rep = run_rigidity_experiment(cfg.experiment())
        if rep.hypotheses_met:
            assert rep.conclusion_sup <= 1e-8, name
