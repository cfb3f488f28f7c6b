"""Legendre correspondence between T*M and TM, Lagrangians, and sampled
convergence tables for sequences of fiber-convex Hamiltonians."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dsl import HamiltonianExpr, HamiltonianSequence, require_tonelli
from .geometry import Box, PhasePoint, TangentPoint

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 100


class LegendreConvergenceError(RuntimeError):
    def __init__(self, message, last_iterate, residual):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class SingularHessianError(LegendreConvergenceError):
    pass


@dataclass(frozen=True)
class LegendreResult:
    p_star: np.ndarray
    L_value: float
    newton_iters: int
    residual: float


def legendre_map(H: HamiltonianExpr, x: PhasePoint, k: int | None = None) -> TangentPoint:
    return TangentPoint(x.q, H.grad_p(x.q, x.p, k), x.manifold)


def _solve(J: np.ndarray, r: np.ndarray) -> np.ndarray:
    if J.shape[-1] == 1:
        return r / J[..., 0]
    return np.linalg.solve(J, r[..., None])[..., 0]


def inverse_batch(H: HamiltonianExpr, q, v, k: int | None = None, tol: float = NEWTON_TOL,
                  max_iter: int = NEWTON_MAX_ITER, p0=None, rtol: float = 0.0):
    """Solve dH/dp(q, p) = v for p at many points at once.

    Damped Newton with the exact fiber Hessian; each point halves its own step
    until the squared residual decreases (Armijo). A point has converged when
    its residual is at most ``tol + rtol * |v|``. Returns ``(p, iters, residual)``
    with per-point iteration counts and residual norms.
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    q, v = np.broadcast_arrays(q, v)
    shape = v.shape
    n = shape[-1]
    q, v = q.reshape(-1, n), v.reshape(-1, n)
    p = (v.copy() if p0 is None else np.array(np.broadcast_to(p0, shape), dtype=float).reshape(-1, n))
    r = H.grad_p(q, p, k) - v
    res = np.linalg.norm(r, axis=-1)
    thresh = tol + rtol * np.linalg.norm(v, axis=-1)
    iters = np.zeros(res.shape, dtype=int)
    for _ in range(max_iter):
        active = res > thresh
        if not np.any(active):
            break
        qa, pa, ra = q[active], p[active], r[active]
        J = H.hess_pp(qa, pa, k)
        det = np.linalg.det(J)
        scale = np.max(np.abs(J), axis=(-1, -2))
        if np.any(np.abs(det) <= 1e-14 * np.maximum(scale, 1.0) ** J.shape[-1]):
            bad = np.flatnonzero(active)[np.argmin(np.abs(det))]
            raise SingularHessianError("singular fiber Hessian during Legendre inversion",
                                       p[bad].copy(), float(res[bad]))
        step = _solve(J, ra)
        f0 = np.sum(ra ** 2, axis=-1)
        alpha = np.ones(len(qa))
        pending = np.ones(len(qa), dtype=bool)
        pn, rn = pa.copy(), ra.copy()
        for _ in range(60):
            cand = pa[pending] - alpha[pending, None] * step[pending]
            rc = H.grad_p(qa[pending], cand, k) - v[active][pending]
            fc = np.sum(rc ** 2, axis=-1)
            ok = fc <= (1.0 - 1e-4 * alpha[pending]) * f0[pending]
            idx = np.flatnonzero(pending)
            pn[idx[ok]], rn[idx[ok]] = cand[ok], rc[ok]
            pending[idx[ok]] = False
            if not np.any(pending):
                break
            alpha[pending] *= 0.5
        # points that never decreased keep the smallest tried step
        if np.any(pending):
            idx = np.flatnonzero(pending)
            pn[idx] = pa[idx] - alpha[idx, None] * step[idx]
            rn[idx] = H.grad_p(qa[idx], pn[idx], k) - v[active][idx]
        p[active], r[active] = pn, rn
        res[active] = np.linalg.norm(rn, axis=-1)
        iters[active] += 1
    if np.any(res > thresh):
        bad = int(np.argmax(res - thresh))
        raise LegendreConvergenceError(
            f"Legendre inversion did not reach {tol:g} in {max_iter} iterations "
            f"(residual {res[bad]:.3g})", p[bad].copy(), float(res[bad]))
    return p.reshape(shape), iters.reshape(shape[:-1]), res.reshape(shape[:-1])


def legendre_inverse(H: HamiltonianExpr, y: TangentPoint, k: int | None = None,
                     tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER) -> LegendreResult:
    p, iters, res = inverse_batch(H, y.q, y.v, k, tol, max_iter)
    L = float(p @ y.v - H.value(y.q, p, k))
    return LegendreResult(p, L, int(iters), float(res))


def lagrangian(H: HamiltonianExpr, y: TangentPoint, k: int | None = None) -> float:
    return legendre_inverse(H, y, k).L_value


def lagrangian_batch(H: HamiltonianExpr, q, v, k: int | None = None, p0=None, **newton):
    """``(L, p*)`` at many tangent points; p* is also dL/dv."""
    p, _, _ = inverse_batch(H, q, v, k, p0=p0, **newton)
    L = np.sum(p * np.asarray(v), axis=-1) - H.value(q, p, k)
    return L, p


def lagrangian_derivatives(H: HamiltonianExpr, q, v, k: int | None = None, p0=None, **newton):
    """``(L, dL/dq, dL/dv)`` by the envelope identities dL/dv = p*, dL/dq = -dH/dq(q, p*)."""
    L, p = lagrangian_batch(H, q, v, k, p0, **newton)
    return L, -H.grad_q(q, p, k), p


def momentum_jacobian(H: HamiltonianExpr, q, p, k: int | None = None) -> np.ndarray:
    """Jacobian of (q, v) -> dL/dv at v = dH/dp(q, p): ``[-Hpp^-1 Hpq, Hpp^-1]``."""
    hinv = np.linalg.inv(H.hess_pp(q, p, k))
    return np.concatenate([-hinv @ H.hess_pq(q, p, k), hinv], axis=-1)


@dataclass(frozen=True)
class ConvergenceRow:
    k: int
    sup_F_dev: float
    sup_dFp_dev: float
    sup_Linv_dev: float
    sup_L_dev: float


@dataclass(frozen=True)
class ConvergenceTable:
    rows: tuple[ConvergenceRow, ...]
    box: Box
    seed: int
    method: dict = field(default_factory=dict)

    HEADER = ("k", "sup_F_dev", "sup_dFp_dev", "sup_Linv_dev", "sup_L_dev")

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.HEADER)
            for r in self.rows:
                w.writerow([r.k] + [repr(float(getattr(r, c))) for c in self.HEADER[1:]])


def roc_table(seq: HamiltonianSequence, box: Box, ks, tangent_box: Box | None = None,
              grid_per_axis: int | None = None, n_random: int = 1000, seed: int = 0,
              certify: bool = True) -> ConvergenceTable:
    """Sampled sup-deviations of F_k, dF_k/dp, the inverse Legendre map and L_k.

    ``box`` is sampled in T*M; ``tangent_box`` (default: same bounds read as
    velocities) in TM. Every F_k and F is Tonelli-certified on ``box`` first.
    """
    tbox = box if tangent_box is None else tangent_box
    periodic = seq.manifold.is_torus
    q, p = box.sample(grid_per_axis, n_random, seed, periodic_q=periodic)
    qt, vt = tbox.sample(grid_per_axis, n_random, seed + 1, periodic_q=periodic)
    F = seq.limit
    if certify:
        require_tonelli(F, box, seed=seed)
    F_val, F_dp = F.value(q, p), F.grad_p(q, p)
    L_val, L_p = lagrangian_batch(F, qt, vt)
    rows = []
    for k in sorted(ks):
        Fk = seq.instance(k)
        if certify:
            require_tonelli(Fk, box, seed=seed)
        Lk_val, Lk_p = lagrangian_batch(Fk, qt, vt, p0=L_p)
        rows.append(ConvergenceRow(
            int(k),
            float(np.max(np.abs(Fk.value(q, p) - F_val))),
            float(np.max(np.linalg.norm(Fk.grad_p(q, p) - F_dp, axis=-1))),
            float(np.max(np.linalg.norm(Lk_p - L_p, axis=-1))),
            float(np.max(np.abs(Lk_val - L_val))),
        ))
    method = {"grid_per_axis": box.grid_per_axis_default() if grid_per_axis is None else grid_per_axis,
              "n_random": n_random, "seed": seed, "estimator": "grid+seeded-uniform max"}
    return ConvergenceTable(tuple(rows), box, seed, method)


def roundtrip_error(H: HamiltonianExpr, box: Box, k: int | None = None, n_samples: int = 1000,
                    seed: int = 0) -> float:
    """Max of |L^{-1}(L(p)) - p| over seeded uniform samples of ``box``."""
    q, p = box.sample(grid_per_axis=0, n_random=n_samples, seed=seed)
    v = H.grad_p(q, p, k)
    back, _, _ = inverse_batch(H, q, v, k)
    return float(np.max(np.linalg.norm(back - p, axis=-1)))
