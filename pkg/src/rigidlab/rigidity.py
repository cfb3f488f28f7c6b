"""Poisson brackets, the bracket-flow integral identity and end-to-end
rigidity experiments for sequences of Hamiltonians."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .common import Verdict, jsonable, trend_to_zero
from .dsl import HamiltonianExpr, HamiltonianSequence, NotTonelliError, require_tonelli
from .dsl import expr as E
from .dynamics import FlowSpec, integrate, verify_c1_convergence_lemma
from .geometry import Box, DiscretizedArc, PhasePoint, trapezoid
from .hj import l2_convergence_via_hj
from .variational import minimizer_convergence_experiment


def bracket_expr(F: HamiltonianExpr, G: HamiltonianExpr) -> HamiltonianExpr:
    """Symbolic {F, G} = sum_i dF/dq_i dG/dp_i - dF/dp_i dG/dq_i."""
    if F.manifold != G.manifold:
        raise ValueError("bracket of Hamiltonians on different manifolds")
    pos, negs = E.Const(0.0), E.Const(0.0)
    for q, p in zip(F.qvars, F.pvars):
        pos = E.add(pos, E.mul(E.diff(F.node, q), E.diff(G.node, p)))
        negs = E.add(negs, E.mul(E.diff(F.node, p), E.diff(G.node, q)))
    return HamiltonianExpr(E.sub(pos, negs), F.manifold, validate=False)


def _k_for(H: HamiltonianExpr, k):
    return k if H.has_parameter else None


def bracket_values(F: HamiltonianExpr, G: HamiltonianExpr, q, p, k: int | None = None) -> np.ndarray:
    """{F, G} at arrays of points from exact partials.

    Written as A - B with A = F_q . G_p and B = F_p . G_q, so swapping F and G
    swaps A and B and the result is negated exactly.
    """
    Fq, Fp = F.gradients(q, p, _k_for(F, k))
    Gq, Gp = G.gradients(q, p, _k_for(G, k))
    return np.sum(Fq * Gp, axis=-1) - np.sum(Fp * Gq, axis=-1)


def bracket(F: HamiltonianExpr, G: HamiltonianExpr, x: PhasePoint, k: int | None = None) -> float:
    return float(bracket_values(F, G, x.q, x.p, k))


@dataclass(frozen=True)
class BracketFunction:
    F: HamiltonianExpr
    G: HamiltonianExpr

    def __call__(self, q, p, k: int | None = None) -> np.ndarray:
        return bracket_values(self.F, self.G, q, p, k)

    def expr(self) -> HamiltonianExpr:
        return bracket_expr(self.F, self.G)


@dataclass(frozen=True)
class IdentityCheck:
    residual: float
    lhs: float
    integral: float
    raw_trapezoid_residual: float


def flow_integral_identity_check(F: HamiltonianExpr, G: HamiltonianExpr, x: PhasePoint,
                                 T: float, k: int | None = None, dt: float = 1e-3,
                                 endpoint_correction: bool = True,
                                 safety_radius=10.0) -> IdentityCheck:
    """|G(phi_T^F x) - G(x) - int_0^T {G, F}(phi_t^F x) dt|.

    The integral is the trapezoid rule on the flow grid, by default with the
    Euler-Maclaurin endpoint term -h^2/12 (f'(T) - f'(0)); the derivative
    f' = {{G, F}, F} along the flow is exact (symbolic).
    """
    kF, kG = _k_for(F, k), _k_for(G, k)
    arc = integrate(FlowSpec(F, 0.0, T, dt, kF, safety_radius=safety_radius), x)
    Q, P = arc.q, arc.fiber
    f = bracket_values(G, F, Q, P, k)
    integral = trapezoid(f, arc.h)
    raw = integral
    if endpoint_correction:
        GF = bracket_expr(G, F)
        ends_q, ends_p = Q[[0, -1]], P[[0, -1]]
        df = bracket_values(GF, F, ends_q, ends_p, k)
        integral = integral - arc.h ** 2 / 12.0 * (df[1] - df[0])
    Gv = G.value(Q[[0, -1]], P[[0, -1]], kG)
    lhs = float(Gv[1] - Gv[0])
    return IdentityCheck(abs(lhs - integral), lhs, integral, abs(lhs - raw))


# -- experiments

class Mode(str, enum.Enum):
    TONELLI = "tonelli"
    C1 = "c1"


DEFAULT_TOLERANCES = {
    "conclusion": 1e-8,
    "identity": 1e-6,
    "c1_radius": 0.5,
    "hj_radius": 0.3,
    "N": 301,
}


@dataclass
class RigidityExperiment:
    F_seq: HamiltonianSequence
    G_seq: HamiltonianSequence
    box: Box
    ks: list[int]
    base_points: list[PhasePoint]
    tau: float = 0.2
    T: float = 1.0
    mode: Mode = Mode.TONELLI
    declared_bracket_limit: HamiltonianExpr | None = None
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    name: str = "experiment"
    grid_per_axis: int | None = None
    n_random: int = 1000

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.ks = sorted(int(k) for k in self.ks)
        if not self.ks:
            raise ValueError("experiment needs at least one k")
        if self.F_seq.manifold != self.G_seq.manifold:
            raise ValueError("F and G sequences live on different manifolds")
        if self.declared_bracket_limit is not None and \
                self.declared_bracket_limit.manifold != self.F_seq.manifold:
            raise ValueError("declared bracket limit lives on another manifold")
        if self.tau <= 0 or self.T <= 0:
            raise ValueError("tau and T must be positive")
        self.tolerances = {**DEFAULT_TOLERANCES, **self.tolerances}

    def tol(self, name: str) -> float:
        return self.tolerances[name]


@dataclass
class Finding:
    """One verdict with the numbers it was based on."""

    section: str
    name: str
    verdict: Verdict
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"section": self.section, "name": self.name, "verdict": self.verdict.value,
                "detail": jsonable(self.detail)}


@dataclass
class ExperimentReport:
    experiment: RigidityExperiment
    hypothesis_rows: list[dict] = field(default_factory=list)
    orbit_rows: list[dict] = field(default_factory=list)
    replay_rows: list[dict] = field(default_factory=list)
    findings: list[Finding] = field(default_factory=list)
    conclusion_sup: float = math.nan
    arcs: dict[str, DiscretizedArc] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    def finding(self, name: str) -> Finding:
        for f in self.findings:
            if f.name == name:
                return f
        raise KeyError(name)

    def verdicts(self) -> dict[str, Verdict]:
        return {f.name: f.verdict for f in self.findings}

    @property
    def verdict(self) -> Verdict:
        vs = [f.verdict for f in self.findings]
        if Verdict.FAIL in vs:
            return Verdict.FAIL
        if Verdict.NOT_MET in vs:
            return Verdict.NOT_MET
        return Verdict.PASS

    @property
    def hypotheses_met(self) -> bool:
        return all(f.verdict is Verdict.PASS for f in self.findings if f.section == "hypothesis")

    def flat_rows(self) -> list[tuple]:
        """Long-format rows (section, name, base_point, k, quantity, value, verdict)."""
        out = []
        for r in self.hypothesis_rows:
            for key, v in r.items():
                if key != "k":
                    out.append(("hypothesis", "sup_deviation", "", r["k"], key, v, ""))
        for r in self.orbit_rows:
            for key, v in r.items():
                if key not in ("k", "base_point", "audit"):
                    out.append(("orbit", r["audit"], r["base_point"], r["k"], key, v, ""))
        for r in self.replay_rows:
            for key, v in r.items():
                if key not in ("k", "base_point"):
                    out.append(("replay", "simple_principle", r["base_point"], r["k"], key, v, ""))
        for f in self.findings:
            out.append((f.section, f.name, "", "", "verdict", "", f.verdict.value))
        out.append(("summary", "overall", "", "", "verdict", "", self.verdict.value))
        return out


def _sup(values) -> float:
    return float(np.max(np.abs(values)))


def _trend_finding(section, name, column, extra=None) -> Finding:
    v = Verdict.PASS if trend_to_zero(column) else Verdict.NOT_MET
    return Finding(section, name, v, {"values": list(map(float, column)), **(extra or {})})


def _hypothesis_audit(exp: RigidityExperiment, report: ExperimentReport, Hhat, q, p):
    F, G = exp.F_seq.limit, exp.G_seq.limit
    Fv, Gv, Hv = F.value(q, p), G.value(q, p), Hhat.value(q, p)
    if exp.mode is Mode.C1:
        Fq, Fp = F.gradients(q, p)
    for k in exp.ks:
        Fk, Gk = exp.F_seq.instance(k), exp.G_seq.instance(k)
        row = {"k": k,
               "sup_F_dev": _sup(Fk.value(q, p) - Fv),
               "sup_G_dev": _sup(Gk.value(q, p) - Gv),
               "sup_bracket_dev": _sup(bracket_values(Fk, Gk, q, p) - Hv)}
        if exp.mode is Mode.C1:
            gq, gp = Fk.gradients(q, p)
            row["sup_dF_dev"] = float(np.max(np.sqrt(np.sum((gq - Fq) ** 2, -1) +
                                                     np.sum((gp - Fp) ** 2, -1))))
        report.hypothesis_rows.append(row)
    col = lambda name: [r[name] for r in report.hypothesis_rows]
    report.findings.append(_trend_finding("hypothesis", "F_k C0-converges", col("sup_F_dev")))
    report.findings.append(_trend_finding("hypothesis", "G_k C0-converges", col("sup_G_dev")))
    report.findings.append(_trend_finding("hypothesis", "brackets converge to H-hat",
                                          col("sup_bracket_dev")))
    if exp.mode is Mode.C1:
        report.findings.append(_trend_finding("hypothesis", "F_k C1-converges", col("sup_dF_dev")))
    else:
        certs, ok = {}, True
        for label, H in [("limit", F)] + [(k, exp.F_seq.instance(k)) for k in exp.ks]:
            try:
                certs[label] = require_tonelli(H, exp.box, seed=exp.seed).to_dict()
            except NotTonelliError as err:
                certs[label] = err.certificate.to_dict() if err.certificate else str(err)
                ok = False
        report.findings.append(Finding("hypothesis", "Tonelli certificates",
                                       Verdict.PASS if ok else Verdict.NOT_MET,
                                       {"certificates": certs}))


def _orbit_audit(exp: RigidityExperiment, report: ExperimentReport, bp: int, x: PhasePoint):
    """Returns the per-k F_k orbit starts used by the replay."""
    starts = {}
    if exp.mode is Mode.TONELLI:
        if report.finding("Tonelli certificates").verdict is not Verdict.PASS:
            report.findings.append(Finding("orbit", f"minimizers converge (base point {bp})",
                                           Verdict.NOT_MET, {"reason": "Tonelli certificate failed"}))
            return None
        mexp = _minimizers(exp, x)
        for r in mexp.rows:
            report.orbit_rows.append({"audit": "minimizers", "base_point": bp, **r.as_dict()})
            if r.k in mexp.results:
                res = mexp.results[r.k]
                report.arcs[f"bp{bp}_k{r.k}_minimizer"] = res.arc
                starts[r.k] = PhasePoint(res.arc.q[0], res.end_momenta[0])
        report.arcs[f"bp{bp}_limit"] = mexp.limit_arc
        checks = mexp.checks()
        report.findings.append(Finding("orbit", f"minimizers converge (base point {bp})",
                                       mexp.verdict, {"checks": checks,
                                                      "uniform_bound": mexp.uniform_bound,
                                                      "sublevel_C": mexp.sublevel_C}))
        try:
            l2 = l2_convergence_via_hj(exp.F_seq, x, exp.ks, exp.tau, int(exp.tol("N")),
                                       r=exp.tol("hj_radius"), seed=exp.seed, experiment=mexp)
            for r in l2.rows:
                report.orbit_rows.append({"audit": "hj_l2", "base_point": bp, **r.as_dict()})
            report.findings.append(Finding("orbit", f"HJ L2 inequality (base point {bp})",
                                           l2.verdict, {"checks": l2.checks(), "C": l2.C,
                                                        "ell": l2.ell, "pde_residual": l2.pde_residual,
                                                        "calibration": l2.calibration}))
        except Exception as exc:  # recorded; the report is still produced
            report.errors.append(f"hj base point {bp}: {type(exc).__name__}: {exc}")
            report.findings.append(Finding("orbit", f"HJ L2 inequality (base point {bp})",
                                           Verdict.FAIL, {"error": str(exc)}))
    else:
        c1 = verify_c1_convergence_lemma(exp.F_seq, x, exp.ks, exp.tol("c1_radius"), seed=exp.seed)
        for r in c1.rows:
            report.orbit_rows.append({"audit": "c1_lemma", "base_point": bp, "k": r.k,
                                      "eps_k": r.eps_k, "max_distance": r.max_distance,
                                      "max_excess": r.max_excess, "stays_in_ball": r.stays_in_ball,
                                      "row_verdict": r.verdict.value})
            starts[r.k] = x
        report.findings.append(Finding("orbit", f"C1 orbit comparison (base point {bp})", c1.verdict,
                                       {"T": c1.T, "K": c1.K, "slack": c1.slack}))
    return starts


def _minimizers(exp, x):
    return minimizer_convergence_experiment(exp.F_seq, x, exp.ks, exp.tau, int(exp.tol("N")),
                                            seed=exp.seed, box=exp.box)


def _replay(exp: RigidityExperiment, report: ExperimentReport, bp: int, x: PhasePoint,
            starts: dict, Hhat: HamiltonianExpr, met: bool):
    """Telescoping replay along F_k orbits: G_k(end) - G_k(start) against the
    integral of {G_k, F_k}, and the two error terms of the limit passage."""
    F = exp.F_seq.limit
    G = exp.G_seq.limit
    duration = exp.tau if exp.mode is Mode.TONELLI else exp.T
    N = int(exp.tol("N"))
    dt = duration / (N - 1) / 4
    limit = integrate(FlowSpec(F, 0.0, duration, dt), x)
    H_lim = Hhat.value(limit.q, limit.fiber)
    h = limit.h
    Gdiff_limit = float(np.diff(G.value(limit.q[[0, -1]], limit.fiber[[0, -1]]))[0])
    t1, t2, ids = [], [], []
    for k in exp.ks:
        if k not in starts:
            continue
        Fk, Gk = exp.F_seq.instance(k), exp.G_seq.instance(k)
        try:
            arc = integrate(FlowSpec(Fk, 0.0, duration, dt), starts[k])
        except Exception as exc:
            report.errors.append(f"replay bp{bp} k={k}: {type(exc).__name__}: {exc}")
            continue
        Q, P = arc.q, arc.fiber
        f = bracket_values(Gk, Fk, Q, P)
        integral = trapezoid(f, h)
        Gd = float(np.diff(Gk.value(Q[[0, -1]], P[[0, -1]]))[0])
        Hk = Hhat.value(Q, P)
        # G(end) - G(start) = -int H o (Q, P) in the limit; split
        # int {G_k, F_k}(Q_k, P_k) + int H(Q, P) into the two terms
        term1 = abs(trapezoid(f + Hk, h))
        term2 = abs(trapezoid(Hk - H_lim, h))
        row = {"base_point": bp, "k": k, "G_k_difference": Gd, "bracket_integral": integral,
               "telescoping_residual": abs(Gd - integral), "term1": term1, "term2": term2,
               "limit_G_difference": Gdiff_limit, "limit_minus_integral_H": Gdiff_limit +
               trapezoid(H_lim, h)}
        report.replay_rows.append(row)
        report.arcs[f"bp{bp}_k{k}_flow"] = arc
        t1.append(term1)
        t2.append(term2)
        ids.append(abs(Gd - integral))
    if not met:
        verdict = Verdict.NOT_MET
    elif not t1:
        verdict = Verdict.FAIL
    else:
        floor = exp.tol("identity")
        ok = trend_to_zero(t1, zero=floor) and trend_to_zero(t2, zero=floor) \
            and max(ids) <= floor and abs(Gdiff_limit + trapezoid(H_lim, h)) <= floor
        verdict = Verdict.PASS if ok else Verdict.FAIL
    report.findings.append(Finding("conclusion", f"simple principle replay (base point {bp})",
                                   verdict, {"term1": t1, "term2": t2, "telescoping": ids,
                                             "numerical_floor": exp.tol("identity")}))


def run_rigidity_experiment(exp: RigidityExperiment) -> ExperimentReport:
    """(a) hypothesis audit over the box, (b) orbit audit per base point,
    (c) the conclusion sup |{F, G} - H-hat| on the limit expressions,
    (d) the telescoping replay. Failures of sub-runs are recorded, never raised."""
    report = ExperimentReport(exp)
    F, G = exp.F_seq.limit, exp.G_seq.limit
    symbolic = bracket_expr(F, G)
    Hhat = exp.declared_bracket_limit if exp.declared_bracket_limit is not None else symbolic
    q, p = exp.box.sample(exp.grid_per_axis, exp.n_random, exp.seed,
                          periodic_q=F.manifold.is_torus)
    _hypothesis_audit(exp, report, Hhat, q, p)
    met = report.hypotheses_met
    starts_all = {}
    for i, x in enumerate(exp.base_points):
        try:
            starts_all[i] = _orbit_audit(exp, report, i, x)
        except Exception as exc:
            report.errors.append(f"orbit base point {i}: {type(exc).__name__}: {exc}")
            report.findings.append(Finding("orbit", f"orbit audit (base point {i})", Verdict.FAIL,
                                           {"error": str(exc)}))
            starts_all[i] = None
    report.conclusion_sup = _sup(bracket_values(F, G, q, p) - Hhat.value(q, p))
    detail = {"sup_box": report.conclusion_sup, "tolerance": exp.tol("conclusion"),
              "H_hat": Hhat.source(), "symbolic_bracket": symbolic.source(),
              "declared": exp.declared_bracket_limit is not None}
    if not met:
        cv = Verdict.NOT_MET
    else:
        cv = Verdict.PASS if report.conclusion_sup <= exp.tol("conclusion") else Verdict.FAIL
    report.findings.append(Finding("conclusion", "{F,G} = H-hat", cv, detail))
    for i, x in enumerate(exp.base_points):
        if starts_all.get(i):
            _replay(exp, report, i, x, starts_all[i], Hhat, met)
    return report
