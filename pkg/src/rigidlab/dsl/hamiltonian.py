from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..geometry import Box, ManifoldSpec, PhasePoint
from . import expr as E
from .parser import parse_node


class ParameterError(ValueError):
    """The parameter k was missing, superfluous or not an integer."""


class PeriodicityError(ValueError):
    """Expression on a torus is not periodic in its base variables."""


class NotTonelliError(ValueError):
    def __init__(self, message: str, certificate=None):
        super().__init__(message)
        self.certificate = certificate


PERIODICITY_TOL = 1e-9
_PERIODICITY_KS = (1, 2, 3)


class HamiltonianExpr:
    """A parsed closed-form H(q, p; k) bound to a manifold.

    Values and exact partial derivatives are evaluated on arrays: ``q`` and
    ``p`` have shape ``(..., n)``, results broadcast over the leading axes.
    """

    def __init__(self, node: E.Node, manifold: ManifoldSpec, validate: bool = True):
        self.node = node
        self.manifold = manifold
        names = E.free_vars(node)
        self.has_parameter = "k" in names
        self._compiled: dict[tuple[str, ...], object] = {}
        n = manifold.dim
        self._qv = tuple(f"q{i + 1}" for i in range(n))
        self._pv = tuple(f"p{i + 1}" for i in range(n))
        self._keys = {
            "q": tuple((v,) for v in self._qv),
            "p": tuple((v,) for v in self._pv),
            "qp": tuple((v,) for v in self._qv + self._pv),
        }
        if validate and manifold.is_torus:
            check_periodic(self)

    # -- structure
    @property
    def dim(self) -> int:
        return self.manifold.dim

    @property
    def qvars(self) -> list[str]:
        return list(self._qv)

    @property
    def pvars(self) -> list[str]:
        return list(self._pv)

    def source(self) -> str:
        return E.to_source(self.node)

    def __str__(self) -> str:
        return self.source()

    def __repr__(self) -> str:
        return f"HamiltonianExpr({self.source()!r}, {self.manifold.kind.value}{self.dim})"

    def __eq__(self, other) -> bool:
        return isinstance(other, HamiltonianExpr) and self.node == other.node \
            and self.manifold == other.manifold

    def __hash__(self) -> int:
        return hash((self.node, self.manifold))

    def is_separable(self) -> bool:
        """True when H = A(p) + B(q) term by term."""
        qs, ps = set(self.qvars), set(self.pvars)
        for _, term in E.summands(self.node):
            names = E.free_vars(term) - {"k"}
            if names & qs and names & ps:
                return False
        return True

    def substitute_k(self, k: int) -> "HamiltonianExpr":
        return HamiltonianExpr(E.substitute(self.node, "k", E.Const(float(k))),
                               self.manifold, validate=False)

    def derivative(self, *names: str) -> "HamiltonianExpr":
        n = self.node
        for name in names:
            n = E.diff(n, name)
        return HamiltonianExpr(n, self.manifold, validate=False)

    # -- algebra (no revalidation: sums and products of periodic functions stay periodic)
    def _combine(self, other, op) -> "HamiltonianExpr":
        if isinstance(other, HamiltonianExpr):
            if other.manifold != self.manifold:
                raise ValueError("cannot combine Hamiltonians on different manifolds")
            other = other.node
        return HamiltonianExpr(op(self.node, E.lift(other)), self.manifold, validate=False)

    def __add__(self, other):
        return self._combine(other, E.add)

    def __radd__(self, other):
        return HamiltonianExpr(E.add(E.lift(other), self.node), self.manifold, validate=False)

    def __sub__(self, other):
        return self._combine(other, E.sub)

    def __rsub__(self, other):
        return HamiltonianExpr(E.sub(E.lift(other), self.node), self.manifold, validate=False)

    def __mul__(self, other):
        return self._combine(other, E.mul)

    def __rmul__(self, other):
        return HamiltonianExpr(E.mul(E.lift(other), self.node), self.manifold, validate=False)

    def __neg__(self):
        return HamiltonianExpr(E.neg(self.node), self.manifold, validate=False)

    # -- numerics
    def _fn(self, key: tuple[tuple[str, ...], ...]):
        fn = self._compiled.get(key)
        if fn is None:
            nodes = []
            for names in key:
                n = self.node
                for name in names:
                    n = E.diff(n, name)
                nodes.append(n)
            fn = E.compile_nodes(tuple(nodes))
            self._compiled[key] = fn
        return fn

    def _k(self, k):
        if self.has_parameter:
            if k is None:
                raise ParameterError("expression depends on k; supply an integer k")
            if int(k) != k:
                raise ParameterError(f"k must be an integer, got {k}")
            return float(k)
        if k is not None:
            raise ParameterError("expression has no parameter k")
        return 0.0

    def _call(self, key, q, p, k) -> list[np.ndarray]:
        if not isinstance(q, np.ndarray) or q.dtype != float:
            q = np.asarray(q, dtype=float)
        if not isinstance(p, np.ndarray) or p.dtype != float:
            p = np.asarray(p, dtype=float)
        n = self.manifold.dim
        if q.shape[-1:] != (n,) or p.shape[-1:] != (n,):
            raise ValueError(f"expected trailing dimension {n}")
        kk = self._k(k)
        shape = q.shape[:-1] if q.shape == p.shape else np.broadcast_shapes(q.shape[:-1], p.shape[:-1])
        if n == 1:
            args = (q[..., 0], 0.0, p[..., 0], 0.0, kk)
        else:
            args = (q[..., 0], q[..., 1], p[..., 0], p[..., 1], kk)
        with np.errstate(all="ignore"):
            vals = self._fn(key)(*args)
        out = []
        for v in vals:
            if not isinstance(v, np.ndarray) or v.shape != shape:
                v = np.broadcast_to(np.asarray(v, dtype=float), shape)
            out.append(v)
        stacked = out[0][..., None] if len(out) == 1 else np.stack(out, axis=-1)
        if not np.isfinite(stacked).all():
            raise E.DomainError(f"non-finite value of {self.source()}")
        return stacked

    def value(self, q, p, k=None) -> np.ndarray:
        return self._call(((),), q, p, k)[..., 0]

    def grad_q(self, q, p, k=None) -> np.ndarray:
        return self._call(self._keys["q"], q, p, k)

    def grad_p(self, q, p, k=None) -> np.ndarray:
        return self._call(self._keys["p"], q, p, k)

    def gradients(self, q, p, k=None) -> tuple[np.ndarray, np.ndarray]:
        """``(dH/dq, dH/dp)`` from one fused evaluation."""
        both = self._call(self._keys["qp"], q, p, k)
        n = self.manifold.dim
        return both[..., :n], both[..., n:]

    def _hess(self, rows, cols, q, p, k) -> np.ndarray:
        flat = self._call(tuple((r, c) for r in rows for c in cols), q, p, k)
        return flat.reshape(flat.shape[:-1] + (len(rows), len(cols)))

    def hess_pp(self, q, p, k=None) -> np.ndarray:
        h = self._hess(self.pvars, self.pvars, q, p, k)
        return 0.5 * (h + np.swapaxes(h, -1, -2))

    def hess_pq(self, q, p, k=None) -> np.ndarray:
        """Entry [i, j] is d^2 H / dp_i dq_j."""
        return self._hess(self.pvars, self.qvars, q, p, k)

    def hess_qq(self, q, p, k=None) -> np.ndarray:
        h = self._hess(self.qvars, self.qvars, q, p, k)
        return 0.5 * (h + np.swapaxes(h, -1, -2))


class Partials(NamedTuple):
    dq: np.ndarray
    dp: np.ndarray
    dpp: np.ndarray


def parse(source: str, m: ManifoldSpec, validate: bool = True) -> HamiltonianExpr:
    """Parse ``source`` into a Hamiltonian on ``m``.

    Raises :class:`~rigidlab.dsl.parser.DSLSyntaxError` (or a subclass) on bad
    input and :class:`PeriodicityError` for non-periodic torus expressions.
    """
    return HamiltonianExpr(parse_node(source, m.dim), m, validate=validate)


def evaluate(H: HamiltonianExpr, x: PhasePoint, k: int | None = None) -> float:
    return float(H.value(x.q, x.p, k))


def partials(H: HamiltonianExpr, x: PhasePoint, k: int | None = None) -> Partials:
    return Partials(H.grad_q(x.q, x.p, k), H.grad_p(x.q, x.p, k), H.hess_pp(x.q, x.p, k))


def _values_skipping_domain_errors(H, q, p, k):
    try:
        return H.value(q, p, k)
    except E.DomainError:
        out = np.full(q.shape[0], np.nan)
        for i in range(q.shape[0]):
            try:
                out[i] = H.value(q[i], p[i], k)
            except E.DomainError:
                pass
        return out


def check_periodic(H: HamiltonianExpr, n_points: int = 100, seed: int = 20240) -> None:
    """Randomized check that q -> q + period leaves H unchanged."""
    m = H.manifold
    rng = np.random.default_rng(seed)
    period = m.period_array
    q = rng.random((n_points, m.dim)) * period
    p = rng.uniform(-2.0, 2.0, (n_points, m.dim))
    ks = _PERIODICITY_KS if H.has_parameter else (None,)
    for k in ks:
        base = _values_skipping_domain_errors(H, q, p, k)
        for axis in range(m.dim):
            shifted = q.copy()
            shifted[:, axis] += period[axis]
            moved = _values_skipping_domain_errors(H, shifted, p, k)
            ok = np.isfinite(base) & np.isfinite(moved)
            err = np.abs(moved - base)[ok]
            scale = np.maximum(1.0, np.abs(base[ok]))
            if err.size and np.any(err > PERIODICITY_TOL * scale):
                raise PeriodicityError(
                    f"{H.source()} is not periodic in q{axis + 1} with period {period[axis]}"
                    + (f" (k={k})" if k is not None else ""))


class HamiltonianSequence:
    """A family k -> F_k together with its declared limit F."""

    def __init__(self, family: HamiltonianExpr, limit: HamiltonianExpr):
        if family.manifold != limit.manifold:
            raise ValueError("family and limit must share a manifold")
        if limit.has_parameter:
            raise ParameterError("the limit may not depend on k")
        self.family = family
        self.limit = limit
        self._cache: dict[int, HamiltonianExpr] = {}

    @classmethod
    def parse(cls, family: str, limit: str, m: ManifoldSpec) -> "HamiltonianSequence":
        return cls(parse(family, m), parse(limit, m))

    @classmethod
    def constant(cls, H: HamiltonianExpr) -> "HamiltonianSequence":
        return cls(H, H)

    @property
    def manifold(self) -> ManifoldSpec:
        return self.limit.manifold

    def instance(self, k: int) -> HamiltonianExpr:
        if int(k) != k:
            raise ParameterError(f"k must be an integer, got {k}")
        k = int(k)
        if k not in self._cache:
            self._cache[k] = self.family.substitute_k(k) if self.family.has_parameter else self.family
        return self._cache[k]

    def __repr__(self):
        return f"HamiltonianSequence({self.family.source()!r} -> {self.limit.source()!r})"


@dataclass(frozen=True)
class TonelliCertificate:
    domain: Box
    samples: int
    seed: int
    hessian_min_eig: float
    superlinearity_probe: tuple[tuple[float, float], ...]

    @property
    def tonelli_on_box(self) -> bool:
        return self.hessian_min_eig > 0

    @property
    def superlinearity(self) -> str:
        # finite sampling can never prove superlinearity
        vals = [v for _, v in self.superlinearity_probe]
        increasing = all(b > a for a, b in zip(vals, vals[1:]))
        return "plausible" if increasing else "not supported"

    @property
    def passed(self) -> bool:
        return self.tonelli_on_box and self.superlinearity == "plausible"

    def to_dict(self) -> dict:
        return {"domain": self.domain.to_config(), "samples": self.samples, "seed": self.seed,
                "hessian_min_eig": self.hessian_min_eig,
                "superlinearity_probe": [list(r) for r in self.superlinearity_probe],
                "tonelli_on_box": self.tonelli_on_box, "superlinearity": self.superlinearity}


DEFAULT_RADII = (1.0, 2.0, 4.0, 8.0, 16.0)


def _directions(n: int) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    ang = np.linspace(0.0, 2 * math.pi, 16, endpoint=False)
    return np.stack([np.cos(ang), np.sin(ang)], axis=-1)


def tonelli_check(H: HamiltonianExpr, box: Box, samples: int = 1000, k: int | None = None,
                  seed: int = 0, radii=DEFAULT_RADII) -> TonelliCertificate:
    """Sampled fiber-convexity certificate plus a superlinearity probe."""
    if samples < 100:
        raise ValueError("tonelli_check needs at least 100 samples")
    q, p = box.sample(grid_per_axis=0, n_random=samples, seed=seed)
    hpp = H.hess_pp(q, p, k)
    min_eig = float(np.min(np.linalg.eigvalsh(hpp)))
    dirs = _directions(H.dim)
    qs = q[: min(len(q), 200)]
    probe = []
    for R in radii:
        qq = np.repeat(qs, len(dirs), axis=0)
        pp = np.tile(R * dirs, (len(qs), 1))
        probe.append((float(R), float(np.min(H.value(qq, pp, k)) / R)))
    return TonelliCertificate(box, samples, seed, min_eig, tuple(probe))


def require_tonelli(H: HamiltonianExpr, box: Box, k: int | None = None, **kw) -> TonelliCertificate:
    cert = tonelli_check(H, box, k=k, **kw)
    if not cert.passed:
        raise NotTonelliError(
            f"{H.source()} fails the Tonelli certificate on the box "
            f"(min fiber eigenvalue {cert.hessian_min_eig:.3g}, superlinearity {cert.superlinearity})",
            cert)
    return cert
