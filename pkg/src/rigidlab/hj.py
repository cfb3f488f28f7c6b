"""Local solutions of the Hamilton-Jacobi equation by characteristics, the
calibration identity, Young-gap checks and the L2 argument for minimizers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.spatial import Delaunay

from .common import Verdict, trend_to_zero
from .dsl import HamiltonianExpr, HamiltonianSequence
from .dynamics import field_arrays, run_field
from .geometry import PhasePoint, base_distance, trapezoid
from .legendre import inverse_batch, lagrangian_batch
from .variational import (MinimizerExperiment, action, action_slack,
                          minimizer_convergence_experiment, momentum_lipschitz, sublevel_samples)

TOL_PDE = 1e-4
TOL_CALIBRATION = 1e-5


class CharacteristicCrossingError(RuntimeError):
    """Base projections of the fan came closer than allowed; shrink tau or r."""


class OutsideFanError(ValueError):
    pass


@dataclass
class HJLocalSolution:
    """Characteristic fan phi_t(q', du_0(q')) with seed u_0(q') = p0 . (q' - q0).

    ``Q``, ``P`` have shape ``(T, F, n)`` and ``U`` ``(T, F)`` over the time grid
    ``times`` (symmetric about 0) and the ``F`` seeds. u_t and du_t between
    characteristics are interpolated from the values and slopes carried by the
    fan: cubic Hermite for n = 1, slope-corrected barycentric on a Delaunay
    triangulation for n = 2.
    """

    H: HamiltonianExpr
    k: int | None
    center: PhasePoint
    radius: float
    tau: float
    times: np.ndarray
    seeds: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    U: np.ndarray
    h_fan: float
    center_index: int
    min_separation: float
    _slices: dict = field(default_factory=dict, repr=False)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def dim(self) -> int:
        return self.H.dim

    def time_index(self, t: float) -> int:
        j = int(round((t - self.times[0]) / self.dt))
        if j < 0 or j >= len(self.times) or abs(self.times[j] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not on the solution's time grid")
        return j

    # -- spatial interpolation on one time slice
    def _slice(self, j: int):
        s = self._slices.get(j)
        if s is None:
            if self.dim == 1:
                x = self.Q[j, :, 0]
                s = CubicHermiteSpline(x, self.U[j], self.P[j, :, 0], extrapolate=False)
            else:
                s = Delaunay(self.Q[j])
            self._slices[j] = s
        return s

    def slice_eval(self, j: int, q) -> tuple[np.ndarray, np.ndarray]:
        """``(u_tj(q), du_tj(q))`` for base points ``q`` of shape ``(M, n)``."""
        q = np.atleast_2d(np.asarray(q, dtype=float))
        s = self._slice(j)
        if self.dim == 1:
            x = q[:, 0]
            u = s(x)
            du = s(x, 1)[:, None]
            if np.any(~np.isfinite(u)):
                raise OutsideFanError("point outside the characteristic fan")
            return u, du
        simplex = s.find_simplex(q)
        if np.any(simplex < 0):
            raise OutsideFanError("point outside the characteristic fan")
        T = s.transform[simplex]
        b = np.einsum("mij,mj->mi", T[:, :2], q - T[:, 2])
        w = np.concatenate([b, 1 - b.sum(-1, keepdims=True)], axis=-1)
        verts = s.simplices[simplex]
        Qv, Pv, Uv = self.Q[j][verts], self.P[j][verts], self.U[j][verts]
        # first-order Taylor from each vertex, averaged barycentrically
        u = np.sum(w * (Uv + np.einsum("mvi,mvi->mv", Pv, q[:, None] - Qv)), axis=-1)
        du = np.einsum("mv,mvi->mi", w, Pv)
        return u, du

    def u(self, t: float, q) -> np.ndarray:
        """u_t(q) for t on the time grid."""
        return self.slice_eval(self.time_index(t), q)[0]

    def du(self, t: float, q) -> np.ndarray:
        return self.slice_eval(self.time_index(t), q)[1]

    def valid_region(self, j: int, margin: float | None = None) -> np.ndarray:
        """Per-axis base box ``(n, 2)`` inside the fan at slices j-1, j, j+1,
        shrunk by ``margin`` of its width on each side (more in 2-d, where the
        fan is a deformed square rather than an interval)."""
        if margin is None:
            margin = 0.1 if self.dim == 1 else 0.2
        js = slice(max(j - 1, 0), min(j + 2, len(self.times)))
        lo = self.Q[js].min(axis=1).max(axis=0)
        hi = self.Q[js].max(axis=1).min(axis=0)
        w = hi - lo
        return np.stack([lo + margin * w, hi - margin * w], axis=-1)

    def validation_grid(self, j: int, count: int | None = None) -> np.ndarray:
        count = (21 if self.dim == 1 else 9) if count is None else count
        axes = [np.linspace(a, b, count) for a, b in self.valid_region(j)]
        return np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)

    def pde_residual(self, count: int | None = None) -> float:
        """Max of |du/dt + H(q, du)| over per-slice validation grids at the
        interior grid times, with du/dt by central differences in time."""
        worst = 0.0
        for j in range(1, len(self.times) - 1):
            grid = self.validation_grid(j, count)
            up = self.slice_eval(j + 1, grid)[0]
            um = self.slice_eval(j - 1, grid)[0]
            _, du = self.slice_eval(j, grid)
            res = np.abs((up - um) / (2 * self.dt) + self.H.value(grid, du, self.k))
            worst = max(worst, float(np.max(res)))
        return worst

    def center_orbit(self, t_min: float = 0.0):
        """Indices, base points and momenta of the center characteristic for t >= t_min."""
        js = np.flatnonzero(self.times >= t_min - 1e-12)
        c = self.center_index
        return js, self.Q[js, c], self.P[js, c]

    def mixed_partials_gap(self, count: int | None = None) -> float:
        """Max |d/dq (du/dt) - d/dt (du)| by finite differences on the interpolant,
        at about ten interior time slices."""
        n = self.dim
        delta = 0.5 * self.h_fan
        worst = 0.0
        for j in range(1, len(self.times) - 1, max(1, (len(self.times) - 2) // 10)):
            reg = self.valid_region(j)
            axes = [np.linspace(a + delta, b - delta, count or (11 if n == 1 else 5)) for a, b in reg]
            grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
            dt_du = (self.slice_eval(j + 1, grid)[1] - self.slice_eval(j - 1, grid)[1]) / (2 * self.dt)
            for i in range(n):
                e = np.zeros(n)
                e[i] = delta
                up = self.slice_eval(j + 1, grid + e)[0] - self.slice_eval(j - 1, grid + e)[0]
                um = self.slice_eval(j + 1, grid - e)[0] - self.slice_eval(j - 1, grid - e)[0]
                dq_ut = (up - um) / (2 * self.dt * 2 * delta)
                worst = max(worst, float(np.max(np.abs(dq_ut - dt_du[:, i]))))
        return worst


def _seed_grid(x0: PhasePoint, r: float, fan_size: int) -> tuple[np.ndarray, float, int]:
    if fan_size % 2 == 0:
        fan_size += 1
    g = np.linspace(-r, r, fan_size)
    h = float(g[1] - g[0])
    if x0.dim == 1:
        seeds = x0.q + g[:, None]
        center = fan_size // 2
    else:
        G = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
        seeds = x0.q + G
        center = int(np.argmin(np.linalg.norm(G, axis=-1)))
    return seeds, h, center


def _min_pair_separation(X: np.ndarray) -> float:
    if X.shape[-1] == 1:
        x = X[:, 0]
        dx = np.diff(x)
        # a fan that stops being ordered has crossed
        return float(np.min(dx)) if np.all(dx > 0) else -1.0
    d = np.linalg.norm(X[:, None] - X[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    return float(np.min(d))


def hj_solve(H: HamiltonianExpr, x0: PhasePoint, r: float, tau: float, fan_size: int = 41,
             k: int | None = None, n_t: int = 100, substeps: int = 2) -> HJLocalSolution:
    """Method of characteristics on [-tau, tau] from the linear seed
    u_0(q') = p0 . (q' - q0) on the base ball of radius ``r`` about q0.

    Along each characteristic dU/dt = P . dH/dp - H. ``n_t`` is the number of
    recorded intervals on [0, tau]; ``fan_size`` seeds per axis (made odd so the
    center seed is q0 itself). Raises :class:`CharacteristicCrossingError` when
    projections of neighbouring characteristics come closer than h_fan / 2.
    """
    seeds, h_fan, c = _seed_grid(x0, r, fan_size)
    n = x0.dim
    P0 = np.broadcast_to(x0.p, seeds.shape).copy()
    U0 = np.sum(P0 * (seeds - x0.q), axis=-1)[:, None]
    A0 = np.concatenate([seeds, P0], axis=-1)

    def fn(t, a, b):
        q, p = a[:, :n], a[:, n:]
        qd, pd = field_arrays(H, q, p, k)
        ud = np.sum(p * qd, axis=-1, keepdims=True) - H.value(q, p, k)[:, None]
        return np.concatenate([qd, pd], axis=-1), ud

    step = tau / (n_t * substeps)
    fw = run_field(fn, A0, U0, 0.0, step, n_t * substeps, substeps)
    bw = run_field(fn, A0, U0, 0.0, -step, n_t * substeps, substeps)
    A = np.concatenate([bw[0][:0:-1], fw[0]], axis=0)
    U = np.concatenate([bw[1][:0:-1], fw[1]], axis=0)[..., 0]
    times = np.linspace(-tau, tau, 2 * n_t + 1)
    Q, P = A[..., :n], A[..., n:]
    sep = min(_min_pair_separation(Q[j]) for j in range(len(times)))
    if sep < 0.5 * h_fan:
        raise CharacteristicCrossingError(
            f"characteristics come within {sep:.3g} < h_fan/2 = {0.5 * h_fan:.3g}; "
            "use a smaller tau or radius")
    return HJLocalSolution(H, k, x0, float(r), float(tau), times, seeds, Q, P, U, h_fan, c, sep)


# -- checks along the solution

def calibration_error(sol: HJLocalSolution) -> float:
    """Max over t in [0, tau] of |A_L(gamma|[0,t]) - (u_t(gamma(t)) - u_0(gamma(0)))|
    along the center characteristic gamma, actions by the trapezoid rule."""
    js, q, p = sol.center_orbit(0.0)
    v = sol.H.grad_p(q, p, sol.k)
    L, _ = lagrangian_batch(sol.H, q, v, sol.k)
    h = sol.dt
    cum = np.concatenate([[0.0], np.cumsum(0.5 * h * (L[1:] + L[:-1]))])
    u0 = sol.slice_eval(js[0], q[:1])[0][0]
    worst = 0.0
    for i, j in enumerate(js):
        ut = sol.slice_eval(j, q[i:i + 1])[0][0]
        worst = max(worst, abs(cum[i] - (ut - u0)))
    return worst


def young_equality_error(sol: HJLocalSolution) -> float:
    """Max |H(g, du_t(g)) + L(g, g') - du_t(g) . g'| along the center characteristic."""
    js, q, p = sol.center_orbit(-sol.tau)
    v = sol.H.grad_p(q, p, sol.k)
    L, _ = lagrangian_batch(sol.H, q, v, sol.k)
    worst = 0.0
    for i, j in enumerate(js):
        _, du = sol.slice_eval(j, q[i:i + 1])
        gap = sol.H.value(q[i:i + 1], du, sol.k) + L[i] - np.sum(du * v[i])
        worst = max(worst, float(np.max(np.abs(gap))))
    return worst


@dataclass(frozen=True)
class YoungGapReport:
    C_q: float
    min_margin: float
    n_samples: int

    @property
    def passed(self) -> bool:
        return self.min_margin >= -1e-12


def young_gap_check(sol: HJLocalSolution, n_samples: int = 2000, v_radius: float = 2.0,
                    seed: int = 0) -> YoungGapReport:
    """Sampled L(q,v) + H(q,du) - du.v >= C_q |v - v*|^2 with v* = dH/dp(q, du)
    the velocity whose Legendre momentum is du_t(q), and C_q half the smallest
    eigenvalue of L_vv over the sampled region."""
    rng = np.random.default_rng(seed)
    H, k = sol.H, sol.k
    js = rng.integers(0, len(sol.times), n_samples)
    q = np.empty((n_samples, sol.dim))
    du = np.empty((n_samples, sol.dim))
    for j in np.unique(js):
        sel = js == j
        reg = sol.valid_region(int(j))
        q[sel] = reg[:, 0] + (reg[:, 1] - reg[:, 0]) * rng.random((int(sel.sum()), sol.dim))
        du[sel] = sol.slice_eval(int(j), q[sel])[1]
    vstar = H.grad_p(q, du, k)
    v = vstar + rng.uniform(-v_radius, v_radius, (n_samples, sol.dim))
    L, pv = lagrangian_batch(H, q, v, k)
    # L_vv = Hpp^{-1} at the Legendre momentum; the segment from v* to v is
    # covered by sampling both ends and interior points
    ss = np.linspace(0.0, 1.0, 5)
    eigs = []
    for s in ss:
        w = vstar + s * (v - vstar)
        pw, _, _ = inverse_batch(H, q, w, k)
        eigs.append(1.0 / np.max(np.linalg.eigvalsh(H.hess_pp(q, pw, k)), axis=-1))
    C_q = 0.5 * float(np.min(eigs))
    gap = L + H.value(q, du, k) - np.sum(du * v, axis=-1)
    margin = gap - C_q * np.sum((v - vstar) ** 2, axis=-1)
    return YoungGapReport(C_q, float(np.min(margin)), n_samples)


# -- the L2 argument

@dataclass
class L2Row:
    k: int
    lhs: float
    rhs: float
    slack: float
    inequality_ok: bool
    derived_bound: float
    measured_L2_vel: float
    bound_dominates: bool
    chain_lhs: float
    chain_rhs: float
    chain_ok: bool
    eps_k: float

    HEADER = ("k", "lhs", "rhs", "slack", "inequality_ok", "derived_bound", "measured_L2_vel",
              "bound_dominates", "chain_lhs", "chain_rhs", "chain_ok", "eps_k")

    def as_dict(self) -> dict:
        return {h: getattr(self, h) for h in self.HEADER}


@dataclass
class L2Report:
    C: float
    ell: float
    pde_residual: float
    calibration: float
    rows: list[L2Row]
    minimizers: MinimizerExperiment

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def checks(self) -> dict[str, bool]:
        return {
            "inequality": all(r.inequality_ok for r in self.rows),
            "lhs_to_zero": trend_to_zero(self.column("lhs")),
            "bound_dominates": all(r.bound_dominates for r in self.rows),
            "momentum_chain": all(r.chain_ok for r in self.rows),
        }

    @property
    def verdict(self) -> Verdict:
        if not self.minimizers.hypothesis_met:
            return Verdict.NOT_MET
        return Verdict.PASS if all(self.checks().values()) else Verdict.FAIL


def l2_convergence_via_hj(seq: HamiltonianSequence, x0: PhasePoint, ks, tau: float,
                          N: int = 301, r: float = 0.3, fan_size: int = 41, seed: int = 0,
                          experiment: MinimizerExperiment | None = None) -> L2Report:
    """Evaluate, per k on the minimizer gamma_k of L_k,

        LHS = A_L(g_k) - (u_tau(g_k(tau)) - u_0(g_k(0)))
        RHS = C int |g_k' - v*(t, g_k)|^2,   v* = dH/dp(q, du_t(q)),

    the L2 bound sqrt((LHS + slack)/C) + |v*(g_k) - g'|_2 on |g_k' - g'|_2, and
    |P_k - P|_2 <= sqrt(tau) e_k + l (sqrt(tau) |g_k - g|_C0 + |g_k' - g'|_2).
    """
    F = seq.limit
    if experiment is None:
        experiment = minimizer_convergence_experiment(seq, x0, ks, tau, N, seed=seed)
    gamma = experiment.limit_arc
    sol = hj_solve(F, x0, r, tau, fan_size, n_t=N - 1)
    pde = sol.pde_residual()
    cal = calibration_error(sol)
    j0 = sol.time_index(0.0)
    # C from the Young-gap certificate over the fan region
    yg = young_gap_check(sol, seed=seed)
    C = yg.C_q
    Kq, Kv = sublevel_samples(F, experiment.sublevel_C, gamma.q, seed=seed)
    ell = momentum_lipschitz(F, Kq, Kv)
    L_K = lagrangian_batch(F, Kq, Kv)[1]
    rows = []
    h = gamma.h
    for k in sorted(experiment.results):
        res = experiment.results[k]
        gk = res.arc
        A_L_gk = action(F, gk)
        vstar = np.empty_like(gk.fiber)
        for i in range(gk.N):
            _, du = sol.slice_eval(j0 + i, gk.q[i:i + 1])
            vstar[i] = F.grad_p(gk.q[i:i + 1], du)[0]
        uT = sol.slice_eval(j0 + gk.N - 1, gk.q[-1:])[0][0]
        u0 = sol.slice_eval(j0, gk.q[:1])[0][0]
        lhs = A_L_gk - (uT - u0)
        rhs = C * trapezoid(np.sum((gk.fiber - vstar) ** 2, axis=-1), h)
        slack = action_slack(F, gk) + cal + 2.0 * pde * tau
        # |g_k' - g'| <= |g_k' - v*(g_k)| + |v*(g_k) - g'|
        second = math.sqrt(max(trapezoid(np.sum((vstar - gamma.fiber) ** 2, axis=-1), h), 0.0))
        derived = math.sqrt(max(lhs + slack, 0.0) / C) + second
        measured = math.sqrt(max(trapezoid(np.sum((gk.fiber - gamma.fiber) ** 2, -1), h), 0.0))
        Fk = seq.instance(k)
        Lk_K = lagrangian_batch(Fk, Kq, Kv)[1]
        eps_k = float(np.max(np.linalg.norm(Lk_K - L_K, axis=-1)))
        Pk = res.momenta
        chain_lhs = math.sqrt(max(trapezoid(np.sum((Pk - experiment.limit_momenta) ** 2, -1), h), 0.0))
        c0 = float(np.max(base_distance(gk.q, gamma.q, F.manifold)))
        chain_rhs = math.sqrt(tau) * eps_k + ell * (math.sqrt(tau) * c0 + measured)
        rows.append(L2Row(k, lhs, rhs, slack, bool(lhs >= rhs - slack), derived, measured,
                          bool(derived >= measured), chain_lhs, chain_rhs,
                          bool(chain_lhs <= chain_rhs + 1e-12), eps_k))
    return L2Report(C, ell, pde, cal, rows, experiment)
