"""Acceptance criteria, one test per criterion. Each test records a summary
line printed at the end of the session by conftest."""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from rigidlab import corpus
from rigidlab.cli import main
from rigidlab.corpus import T1, T2
from rigidlab.dsl import parse
from rigidlab.dynamics import (GronwallBoundInput, epsilon_defect, gronwall_bound, gronwall_slack,
                               integrate_field, lipschitz_constant, phase_distance)
from rigidlab.geometry import PhasePoint, arc_distance_C0
from rigidlab.hj import calibration_error, hj_solve, l2_convergence_via_hj
from rigidlab.legendre import roc_table, roundtrip_error
from rigidlab.rigidity import bracket_expr, bracket_values, flow_integral_identity_check
from rigidlab.variational import (ActionProblem, minimize_action, minimizer_convergence_experiment,
                                  orbit_arc, weierstrass_check)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
KS = [4, 8, 16, 32, 64, 128, 256]
X0 = PhasePoint([0.5], [1.0], T1)
PEND = parse("0.5*p1^2 + cos(q1)", T1)


@pytest.fixture(scope="module")
def oscillating_experiment():
    t = time.perf_counter()
    exp = minimizer_convergence_experiment(corpus.sequence("oscillating"), X0, KS, 0.2)
    return exp, time.perf_counter() - t


def test_criterion_01_legendre_roundtrip(record):
    t = time.perf_counter()
    errs = {}
    for name in ("free", "pendulum", "cosh-fiber", "coupled"):
        H = corpus.hamiltonian(name)
        errs[name] = roundtrip_error(H, corpus.default_box(H), n_samples=1000, seed=0)
    dt = time.perf_counter() - t
    worst = max(errs.values())
    ok = worst <= 1e-8 and dt < 5
    record("1 Legendre roundtrip", ok, f"max error {worst:.2e} <= 1e-8, {dt:.2f}s < 5s")
    assert worst <= 1e-8, errs
    assert dt < 5


def test_criterion_02_roc_trend(record):
    t = time.perf_counter()
    seq = corpus.sequence("fiber-oscillating")
    table = roc_table(seq, corpus.default_box(seq.limit), KS)
    dt = time.perf_counter() - t
    dfp = table.column("sup_dFp_dev")
    ratio = dfp[0] / dfp[-1]
    within = bool(np.all(dfp <= 1.5 / np.array(KS)))
    ok = ratio >= 20 and within and dt < 10
    record("2 Roc trend", ok, f"shrink {ratio:.1f}x >= 20x, max k*dev {np.max(dfp * KS):.3f} <= 1.5, "
           f"{dt:.2f}s < 10s")
    assert ratio >= 20
    assert within
    assert dt < 10


def test_criterion_03_gronwall(record):
    t = time.perf_counter()
    rng = np.random.default_rng(3)
    h, T = 1e-3, 1.0
    qs, ps = rng.uniform(0, 2 * math.pi, (2000, 1)), rng.uniform(-4, 4, (2000, 1))
    K = lipschitz_constant(PEND, qs, ps)
    slack = gronwall_slack(h, K, T)
    worst = -np.inf
    for _ in range(50):
        x = rng.uniform([0, -1], [2 * math.pi, 1], (2,))
        y = x + rng.normal(scale=0.01, size=2)
        amps = rng.uniform(0, 0.05, 2)
        freqs = rng.uniform(0.5, 3, 2)
        # exact solutions of X + a sin(w t): their defect against X is at most a
        fields = [lambda s, Q, P, a=a, w=w: (P, np.sin(Q) + a * np.sin(w * s)) for a, w in zip(amps, freqs)]
        arcs = [integrate_field(f, [z[0]], [z[1]], 0.0, T, h, T1) for f, z in zip(fields, (x, y))]
        for arc, a in zip(arcs, amps):
            assert epsilon_defect(PEND, arc) <= a + 1e-6
        d = phase_distance(arcs[0].q, arcs[0].fiber, arcs[1].q, arcs[1].fiber)
        g = GronwallBoundInput(K, float(np.linalg.norm(x - y)), amps[0], amps[1], 0.0)
        excess = d - gronwall_bound(g, arcs[0].times) - slack
        worst = max(worst, float(np.max(excess)))
    dt = time.perf_counter() - t
    ok = worst <= 0 and dt < 30
    record("3 Gronwall bound", ok, f"max(distance - bound - slack) {worst:.2e} <= 0 over 50 pairs, "
           f"{dt:.2f}s < 30s")
    assert worst <= 0
    assert dt < 30


def test_criterion_04_orbit_recovery(record):
    t = time.perf_counter()
    orbit, _ = orbit_arc(PEND, X0, 0.3, 301)
    res = minimize_action(ActionProblem(PEND, orbit.q[0], orbit.q[-1], 0.3, 301))
    dist = arc_distance_C0(res.arc, orbit)
    rep = weierstrass_check(PEND, X0, [0.3], n_samples=200)
    row = rep.rows[0]
    dt = time.perf_counter() - t
    ok = dist <= 1e-4 and row.passed and dt < 60
    record("4 orbit recovery", ok, f"C0 distance {dist:.2e} <= 1e-4, beats {row.n_beaten}/200 "
           f"perturbations, {dt:.2f}s < 60s")
    assert dist <= 1e-4
    assert row.n_beaten == 200
    assert dt < 60


def test_criterion_05_minimizer_convergence(record, oscillating_experiment):
    exp, dt = oscillating_experiment
    sq, sp = exp.shrink("sup_Q_dev"), exp.shrink("L2_P_dev")
    bounds = exp.column("C0_bound")
    uniform = bool(np.all(bounds <= exp.uniform_bound))
    ok = sq >= 5 and sp >= 5 and uniform and dt < 300
    record("5 minimizer convergence", ok, f"C0(Q) shrink {sq:.1f}x, L2(P) shrink {sp:.1f}x >= 5x, "
           f"max node norm {np.max(bounds):.3f} <= {exp.uniform_bound:.3f}, {dt:.2f}s < 300s")
    assert sq >= 5 and sp >= 5
    assert uniform
    assert dt < 300


def test_criterion_06_action_chain(record, oscillating_experiment):
    exp, _ = oscillating_experiment
    worst = -np.inf
    for r in exp.rows:
        worst = max(worst, abs(r.A_L_gk - r.A_L_g) - (2 * exp.tau * r.eps_hat + r.slack))
    chain = all(r.chain_ok for r in exp.rows)
    ok = worst <= 0 and chain
    record("6 action chain", ok, f"max(|gap| - 2 tau eps_hat - slack) {worst:.2e} <= 0, "
           f"four-term chain holds at every k: {chain}")
    assert worst <= 0
    assert chain


def test_criterion_07_hamilton_jacobi(record, oscillating_experiment):
    exp, _ = oscillating_experiment
    t = time.perf_counter()
    free = hj_solve(parse("0.5*p1^2", T1), PhasePoint([0.0], [1.0], T1), 0.3, 0.2)
    free_err = 0.0
    for j in range(0, len(free.times), 20):
        q = free.validation_grid(j, 25)
        tj = free.times[j]
        free_err = max(free_err, float(np.max(np.abs(free.u(tj, q) - (q[:, 0] - tj / 2)))))
    sol = hj_solve(PEND, X0, 0.3, 0.2)
    pde, cal = sol.pde_residual(), calibration_error(sol)
    rep = l2_convergence_via_hj(corpus.sequence("oscillating"), X0, KS, 0.2, experiment=exp)
    ineq = all(r.inequality_ok for r in rep.rows)
    dt = time.perf_counter() - t
    ok = free_err <= 1e-8 and pde <= 1e-4 and cal <= 1e-5 and ineq and dt < 120
    record("7 Hamilton-Jacobi", ok, f"free closed form {free_err:.1e} <= 1e-8, pendulum PDE {pde:.1e} "
           f"<= 1e-4, calibration {cal:.1e} <= 1e-5, L2 inequality at all k: {ineq}, {dt:.2f}s < 120s")
    assert free_err <= 1e-8
    assert pde <= 1e-4
    assert cal <= 1e-5
    assert ineq
    assert dt < 120


def test_criterion_08_bracket_flow_identity(record):
    t = time.perf_counter()
    free_sin = flow_integral_identity_check(parse("0.5*p1^2", T1), parse("sin(q1)", T1),
                                            PhasePoint([0.0], [1.0], T1), 1.0)
    closed = abs(free_sin.integral - math.sin(1.0))
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(20):
        m = T1 if rng.random() < 0.5 else T2
        names = corpus.names_on(m)
        F, G = (corpus.hamiltonian(names[i]) for i in rng.integers(len(names), size=2))
        x = PhasePoint(rng.uniform(0, 2 * math.pi, m.dim), rng.uniform(-1.5, 1.5, m.dim), m)
        T = float(np.round(rng.uniform(0.2, 2.0), 3))
        worst = max(worst, flow_integral_identity_check(F, G, x, T).residual)
    dt = time.perf_counter() - t
    ok = free_sin.residual <= 1e-6 and closed <= 1e-8 and worst <= 1e-6 and dt < 30
    record("8 bracket-flow identity", ok, f"free/sin residual {free_sin.residual:.1e}, closed form "
           f"{closed:.1e} <= 1e-8, 20 random pairs max {worst:.1e} <= 1e-6, {dt:.2f}s < 30s")
    assert free_sin.residual <= 1e-6 and closed <= 1e-8
    assert worst <= 1e-6
    assert dt < 30


def test_criterion_09_flagship_cli(record, tmp_path):
    t = time.perf_counter()
    code = main(["rigidity", "--config", str(CONFIGS / "theorem1_flagship.toml"),
                 "--out", str(tmp_path / "flagship")])
    doc = json.loads((tmp_path / "flagship" / "report.json").read_text())
    code_v = main(["rigidity", "--config", str(CONFIGS / "flagship_g_p1.toml"),
                   "--out", str(tmp_path / "variant")])
    var = json.loads((tmp_path / "variant" / "report.json").read_text())
    dt = time.perf_counter() - t
    met = doc["results"]["hypotheses_met"]
    sup = doc["results"]["conclusion_sup"]
    concl = [f["verdict"] for f in var["findings"] if f["section"] == "conclusion"]
    silent = bool(concl) and all(v == "hypothesis-not-met" for v in concl)
    ok = (code == 0 and met and sup <= 1e-8 and code_v == 0 and not var["results"]["hypotheses_met"]
          and var["verdict"] == "hypothesis-not-met" and silent and dt < 300)
    record("9 flagship instance", ok, f"exit {code}, hypotheses met {met}, sup|{{F,G}} - H| {sup:.1e} "
           f"<= 1e-8; G=p1 variant exit {code_v}, verdict {var['verdict']}; {dt:.2f}s < 300s")
    assert code == 0 and met and sup <= 1e-8
    assert code_v == 0 and var["verdict"] == "hypothesis-not-met" and silent
    assert dt < 300


def test_criterion_10_bracket_algebra(record):
    t = time.perf_counter()
    rng = np.random.default_rng(10)
    errs = {"antisymmetry": 0.0, "bilinearity": 0.0, "leibniz": 0.0, "jacobi": 0.0}
    for m in (T1, T2):
        Hs = [corpus.hamiltonian(n) for n in corpus.names_on(m)]
        q = rng.uniform(0, 2 * math.pi, (200, m.dim))
        p = rng.uniform(-2, 2, (200, m.dim))
        for _ in range(10):
            F, G, K = (Hs[i] for i in rng.integers(len(Hs), size=3))
            a, b = rng.uniform(-3, 3, 2)
            FG, GF = bracket_values(F, G, q, p), bracket_values(G, F, q, p)
            errs["antisymmetry"] = max(errs["antisymmetry"], float(np.max(np.abs(FG + GF))))
            lin = bracket_values(a * F + b * K, G, q, p) - (a * FG + b * bracket_values(K, G, q, p))
            errs["bilinearity"] = max(errs["bilinearity"], float(np.max(np.abs(lin))))
            leib = bracket_values(F * G, K, q, p) - (F.value(q, p) * bracket_values(G, K, q, p)
                                                     + bracket_values(F, K, q, p) * G.value(q, p))
            errs["leibniz"] = max(errs["leibniz"], float(np.max(np.abs(leib))))
            jac = (bracket_values(bracket_expr(F, G), K, q, p) + bracket_values(bracket_expr(G, K), F, q, p)
                   + bracket_values(bracket_expr(K, F), G, q, p))
            errs["jacobi"] = max(errs["jacobi"], float(np.max(np.abs(jac))))
    dt = time.perf_counter() - t
    tols = {"antisymmetry": 0.0, "bilinearity": 1e-12, "leibniz": 1e-10, "jacobi": 1e-8}
    ok = all(errs[k] <= tols[k] for k in tols) and dt < 5
    record("10 bracket algebra", ok, ", ".join(f"{k} {errs[k]:.1e} <= {tols[k]:g}" for k in tols)
           + f", {dt:.2f}s < 5s")
    for k in tols:
        assert errs[k] <= tols[k], k
    assert dt < 5
