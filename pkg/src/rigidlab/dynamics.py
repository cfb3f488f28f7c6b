"""Hamiltonian vector fields and flows, Euler-Lagrange flows, epsilon-solutions
and the Gronwall comparison bound.

Sign convention: with omega = dq ^ dp and dH = omega(X_H, .), the symplectic
gradient is X_H = (dH/dp, -dH/dq).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .common import Verdict, trend_to_zero
from .dsl import HamiltonianExpr, HamiltonianSequence
from .geometry import DiscretizedArc, ManifoldSpec, NodeKind, PhasePoint, TangentPoint
from .legendre import inverse_batch

DEFAULT_SAFETY_RADIUS = 10.0
LIPSCHITZ_INFLATION = 1.1


class EscapeError(RuntimeError):
    """The orbit left the configured safety box."""

    def __init__(self, message, t, q, p):
        super().__init__(message)
        self.t, self.q, self.p = t, q, p


class Integrator(str, enum.Enum):
    RK4 = "rk4"
    STORMER_VERLET = "stormer_verlet"


def field_arrays(H: HamiltonianExpr, q, p, k: int | None = None):
    dq, dp = H.gradients(q, p, k)
    return dp, -dq


def hamiltonian_field(H: HamiltonianExpr, x: PhasePoint, k: int | None = None):
    """Phase velocity ``(qdot, pdot)`` of X_H at ``x``."""
    return field_arrays(H, x.q, x.p, k)


def field_jacobian(H: HamiltonianExpr, q, p, k: int | None = None) -> np.ndarray:
    """Jacobian of (q, p) -> X_H, shape ``(..., 2n, 2n)``."""
    hpq = H.hess_pq(q, p, k)
    top = np.concatenate([hpq, H.hess_pp(q, p, k)], axis=-1)
    bottom = np.concatenate([-H.hess_qq(q, p, k), -np.swapaxes(hpq, -1, -2)], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def lipschitz_constant(H: HamiltonianExpr, q, p, k: int | None = None,
                       inflate: float = LIPSCHITZ_INFLATION) -> float:
    """Max operator norm of the field Jacobian over sample points, inflated."""
    J = field_jacobian(H, q, p, k)
    return inflate * float(np.max(np.linalg.norm(J, ord=2, axis=(-2, -1))))


@dataclass(frozen=True)
class FlowSpec:
    H: HamiltonianExpr
    t0: float
    t1: float
    dt: float
    k: int | None = None
    integrator: Integrator = Integrator.RK4
    record_every: int = 1
    safety_radius: float | None = DEFAULT_SAFETY_RADIUS

    def __post_init__(self):
        object.__setattr__(self, "integrator", Integrator(self.integrator))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.t1 == self.t0:
            raise ValueError("empty time interval")
        if self.integrator is Integrator.STORMER_VERLET and not self.H.is_separable():
            raise ValueError("Stormer-Verlet needs a separable Hamiltonian A(p) + B(q)")

    @property
    def n_steps(self) -> int:
        n = int(round(abs(self.t1 - self.t0) / self.dt))
        n = max(n, 1)
        if n % self.record_every:
            raise ValueError(f"{n} steps is not a multiple of record_every={self.record_every}")
        return n


def _check_escape(t, q, p, radius):
    if radius is None:
        return
    norms = np.linalg.norm(p, axis=-1)
    if np.any(norms > radius) or not np.all(np.isfinite(norms)):
        i = int(np.nanargmax(np.where(np.isfinite(norms), norms, np.inf)))
        raise EscapeError(f"orbit left the safety box |p| <= {radius} at t={t:.6g}",
                          t, q[i].copy(), p[i].copy())


def run_field(fn: Callable, q0, p0, t0: float, step: float, n_steps: int,
              record_every: int = 1, safety_radius=None):
    """Fixed-step RK4 for ``fn(t, q, p) -> (qdot, pdot)`` on a batch.

    ``q0``/``p0`` have shape ``(B, n)``; returns recorded ``(Q, P)`` with
    shape ``(n_steps // record_every + 1, B, n)``. ``step`` may be negative.
    """
    q = np.array(q0, dtype=float)
    p = np.array(p0, dtype=float)
    nrec = n_steps // record_every + 1
    Q = np.empty((nrec,) + q.shape)
    P = np.empty((nrec,) + p.shape)
    Q[0], P[0] = q, p
    t, h = t0, step
    for i in range(1, n_steps + 1):
        a1, b1 = fn(t, q, p)
        a2, b2 = fn(t + 0.5 * h, q + 0.5 * h * a1, p + 0.5 * h * b1)
        a3, b3 = fn(t + 0.5 * h, q + 0.5 * h * a2, p + 0.5 * h * b2)
        a4, b4 = fn(t + h, q + h * a3, p + h * b3)
        q = q + (h / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
        p = p + (h / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4)
        t = t0 + i * h
        _check_escape(t, q, p, safety_radius)
        if i % record_every == 0:
            Q[i // record_every], P[i // record_every] = q, p
    return Q, P


def _run_verlet(H, k, q0, p0, step, n_steps, record_every, safety_radius):
    q = np.array(q0, dtype=float)
    p = np.array(p0, dtype=float)
    nrec = n_steps // record_every + 1
    Q = np.empty((nrec,) + q.shape)
    P = np.empty((nrec,) + p.shape)
    Q[0], P[0] = q, p
    h = step
    # for separable H, dH/dq depends on q only and dH/dp on p only
    for i in range(1, n_steps + 1):
        p = p - 0.5 * h * H.grad_q(q, p, k)
        q = q + h * H.grad_p(q, p, k)
        p = p - 0.5 * h * H.grad_q(q, p, k)
        _check_escape(i * h, q, p, safety_radius)
        if i % record_every == 0:
            Q[i // record_every], P[i // record_every] = q, p
    return Q, P


def integrate_batch(spec: FlowSpec, q0, p0):
    """Integrate many initial conditions; returns ``(times, Q, P)`` in the
    direction of integration (times run from t0 to t1)."""
    n = spec.n_steps
    step = (spec.t1 - spec.t0) / n
    q0 = np.atleast_2d(np.asarray(q0, dtype=float))
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))
    if spec.integrator is Integrator.RK4:
        H, k = spec.H, spec.k
        Q, P = run_field(lambda t, q, p: field_arrays(H, q, p, k), q0, p0, spec.t0, step, n,
                         spec.record_every, spec.safety_radius)
    else:
        Q, P = _run_verlet(spec.H, spec.k, q0, p0, step, n, spec.record_every, spec.safety_radius)
    times = spec.t0 + step * spec.record_every * np.arange(Q.shape[0])
    return times, Q, P


def _as_arc(t_start, t_end, Q, P, kind, manifold, meta) -> DiscretizedArc:
    if t_end < t_start:
        return DiscretizedArc(t_end, t_start, Q[::-1], P[::-1], kind, manifold,
                              {**meta, "direction": -1})
    return DiscretizedArc(t_start, t_end, Q, P, kind, manifold, {**meta, "direction": 1})


def integrate(spec: FlowSpec, x0: PhasePoint) -> DiscretizedArc:
    """Flow ``x0`` under X_H; nodes are chronological even for t1 < t0.

    The arc's ``meta`` carries ``energy_drift`` = max |H(node) - H(x0)|.
    """
    _, Q, P = integrate_batch(spec, x0.q[None], x0.p[None])
    Q, P = Q[:, 0], P[:, 0]
    energy = spec.H.value(Q, P, spec.k)
    meta = {"energy_drift": float(np.max(np.abs(energy - energy[0]))),
            "integrator": spec.integrator.value, "dt": abs(spec.t1 - spec.t0) / spec.n_steps,
            "hamiltonian": spec.H.source(), "k": spec.k}
    return _as_arc(spec.t0, spec.t1, Q, P, NodeKind.PHASE, spec.H.manifold, meta)


def flow_point(H: HamiltonianExpr, x0: PhasePoint, t: float, dt: float = 1e-3,
               k: int | None = None, safety_radius=DEFAULT_SAFETY_RADIUS) -> tuple[np.ndarray, np.ndarray]:
    """Unwrapped ``(q, p)`` of phi_t(x0)."""
    spec = FlowSpec(H, 0.0, t, dt, k, safety_radius=safety_radius)
    _, Q, P = integrate_batch(spec, x0.q[None], x0.p[None])
    return Q[-1, 0], P[-1, 0]


def integrate_field(fn: Callable, q0, p0, t0: float, t1: float, dt: float,
                    manifold: ManifoldSpec, record_every: int = 1,
                    safety_radius=DEFAULT_SAFETY_RADIUS) -> DiscretizedArc:
    """RK4 arc of a general (possibly time-dependent) field ``fn(t, q, p)``."""
    n = max(int(round(abs(t1 - t0) / dt)), 1)
    if n % record_every:
        raise ValueError("step count is not a multiple of record_every")
    step = (t1 - t0) / n
    Q, P = run_field(fn, np.atleast_2d(q0), np.atleast_2d(p0), t0, step, n, record_every,
                     safety_radius)
    return _as_arc(t0, t1, Q[:, 0], P[:, 0], NodeKind.PHASE, manifold, {})


def euler_lagrange_flow(H: HamiltonianExpr, y0: TangentPoint, t0: float, t1: float,
                        dt: float, k: int | None = None, record_every: int = 1,
                        safety_radius=DEFAULT_SAFETY_RADIUS) -> DiscretizedArc:
    """Euler-Lagrange flow obtained by conjugating the Hamiltonian flow with
    the Legendre map: pull back (q, v) to (q, p), flow, push forward."""
    p0, _, _ = inverse_batch(H, y0.q, y0.v, k)
    spec = FlowSpec(H, t0, t1, dt, k, record_every=record_every, safety_radius=safety_radius)
    arc = integrate(spec, PhasePoint(y0.q, p0))
    v = H.grad_p(arc.q, arc.fiber, k)
    return DiscretizedArc(arc.t0, arc.t1, arc.q, v, NodeKind.TANGENT, H.manifold,
                          {**arc.meta, "momenta": arc.fiber})


def _field_callable(X, k):
    if isinstance(X, HamiltonianExpr):
        return lambda t, q, p: field_arrays(X, q, p, k)
    return X


def epsilon_defect(X, arc: DiscretizedArc, k: int | None = None) -> float:
    """Max over interior nodes of |central difference - X(node)|.

    ``X`` is a Hamiltonian (its symplectic gradient is used) or a callable
    ``fn(t, q, p) -> (qdot, pdot)``. ``arc`` must carry momenta.
    """
    if arc.N < 3:
        raise ValueError("need at least 3 nodes for central differences")
    if arc.kind is not NodeKind.PHASE or arc.fiber is None:
        raise ValueError("epsilon_defect needs a phase arc")
    fn = _field_callable(X, k)
    h = arc.h
    dq = (arc.q[2:] - arc.q[:-2]) / (2 * h)
    dp = (arc.fiber[2:] - arc.fiber[:-2]) / (2 * h)
    t = arc.times[1:-1]
    fq, fp = fn(t[:, None], arc.q[1:-1], arc.fiber[1:-1])
    err = np.sqrt(np.sum((dq - fq) ** 2, axis=-1) + np.sum((dp - fp) ** 2, axis=-1))
    return float(np.max(err))


def defect_truncation(arc: DiscretizedArc) -> float:
    """Estimate h^2/6 * max|x'''| of the central-difference error."""
    if arc.N < 5:
        return 0.0
    x = np.concatenate([arc.q, arc.fiber], axis=-1) if arc.fiber is not None else arc.q
    h = arc.h
    third = (x[4:] - 2 * x[3:-1] + 2 * x[1:-3] - x[:-4]) / (2 * h ** 3)
    return float(h ** 2 / 6 * np.max(np.linalg.norm(third, axis=-1)))


@dataclass(frozen=True)
class GronwallBoundInput:
    K: float
    delta: float
    eps1: float
    eps2: float
    tau: float

    def __post_init__(self):
        if min(self.K, self.delta, self.eps1, self.eps2) < 0:
            raise ValueError("Gronwall inputs must be nonnegative")


def gronwall_bound(g: GronwallBoundInput, t):
    """Separation bound for an eps1- and an eps2-solution of a K-Lipschitz field
    that are delta-close at time tau:

        delta e^{K|t-tau|} + (eps1 + eps2)/K (e^{K|t-tau|} - 1),

    with the K -> 0 limit delta + (eps1 + eps2)|t - tau|.
    """
    s = np.abs(np.asarray(t, dtype=float) - g.tau)
    eps = g.eps1 + g.eps2
    growth = np.exp(g.K * s)
    if g.K == 0:
        drift = eps * s
    else:
        drift = eps * np.expm1(g.K * s) / g.K
    out = g.delta * growth + drift
    return float(out) if np.ndim(out) == 0 else out


def gronwall_slack(h: float, K: float, T: float) -> float:
    """Discretization allowance 10 h^2 (1 + K e^{KT})."""
    return 10.0 * h * h * (1.0 + K * math.exp(K * T))


def phase_distance(q1, p1, q2, p2) -> np.ndarray:
    return np.sqrt(np.sum((q1 - q2) ** 2, axis=-1) + np.sum((p1 - p2) ** 2, axis=-1))


def _ball_samples(x0: PhasePoint, r: float, n: int, seed: int):
    rng = np.random.default_rng(seed)
    d = 2 * x0.dim
    u = rng.normal(size=(n, d))
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    rad = r * rng.random(n) ** (1.0 / d)
    pts = np.concatenate([np.concatenate([x0.q, x0.p])[None], u * rad[:, None] +
                          np.concatenate([x0.q, x0.p])], axis=0)
    return pts[:, : x0.dim], pts[:, x0.dim:]


@dataclass
class C1LemmaRow:
    k: int
    eps_k: float
    max_distance: float
    max_excess: float
    stays_in_ball: bool
    verdict: Verdict


@dataclass
class C1LemmaReport:
    x0: PhasePoint
    r: float
    T: float
    K: float
    h: float
    slack: float
    hypothesis_met: bool
    rows: list[C1LemmaRow] = field(default_factory=list)

    @property
    def verdict(self) -> Verdict:
        if not self.hypothesis_met:
            return Verdict.NOT_MET
        return Verdict.PASS if all(r.verdict is Verdict.PASS for r in self.rows) else Verdict.FAIL


def verify_c1_convergence_lemma(seq: HamiltonianSequence, x0: PhasePoint, ks, r: float,
                                n_steps: int = 2000, n_samples: int = 4000,
                                seed: int = 0) -> C1LemmaReport:
    """Orbit-arc convergence for a C1-convergent sequence, checked against the
    Gronwall bound with delta = 0 and defect eps_k = sup_B |X_{F_k} - X_F|.

    T is chosen so that sup_B |X_F| * T = 0.9 r. When the sampled eps_k do
    not vanish the hypothesis is reported as not met and nothing is asserted.
    """
    F = seq.limit
    qb, pb = _ball_samples(x0, r, n_samples, seed)
    fq, fp = field_arrays(F, qb, pb)
    speed = float(np.max(np.sqrt(np.sum(fq ** 2, -1) + np.sum(fp ** 2, -1))))
    T = 0.9 * r / speed if speed > 0 else 1.0
    K = lipschitz_constant(F, qb, pb)
    h = T / n_steps
    slack = gronwall_slack(h, K, T)
    spec = FlowSpec(F, 0.0, T, h, safety_radius=None)
    times, Q, P = integrate_batch(spec, x0.q[None], x0.p[None])
    Q, P = Q[:, 0], P[:, 0]
    x0v = np.concatenate([x0.q, x0.p])
    ks = sorted(ks)
    eps = []
    trajectories = []
    for k in ks:
        Fk = seq.instance(k)
        gq, gp = field_arrays(Fk, qb, pb)
        eps.append(float(np.max(np.sqrt(np.sum((gq - fq) ** 2, -1) + np.sum((gp - fp) ** 2, -1)))))
        _, Qk, Pk = integrate_batch(FlowSpec(Fk, 0.0, T, h, safety_radius=None),
                                    x0.q[None], x0.p[None])
        trajectories.append((Qk[:, 0], Pk[:, 0]))
    met = trend_to_zero(eps)
    report = C1LemmaReport(x0, r, T, K, h, slack, met)
    for k, e, (Qk, Pk) in zip(ks, eps, trajectories):
        dist = phase_distance(Qk, Pk, Q, P)
        bound = gronwall_bound(GronwallBoundInput(K, 0.0, e, 0.0, 0.0), times) + slack
        excess = float(np.max(dist - bound))
        in_ball = bool(np.all(np.linalg.norm(np.concatenate([Qk, Pk], -1) - x0v, axis=-1) < r))
        if not met:
            v = Verdict.NOT_MET
        else:
            v = Verdict.PASS if excess <= 0 else Verdict.FAIL
        report.rows.append(C1LemmaRow(k, e, float(np.max(dist)), excess, in_ball, v))
    return report
