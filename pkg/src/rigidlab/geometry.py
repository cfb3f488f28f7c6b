"""Charts, points, boxes and arc distances on T*M and TM for M = T^n or R^n."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


class GridMismatchError(ValueError):
    """Two arcs do not share time grid, node kind or manifold."""


class ManifoldKind(str, enum.Enum):
    TORUS = "torus"
    EUCLIDEAN = "euclidean"


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ManifoldSpec:
    kind: ManifoldKind
    dim: int
    periods: tuple[float, ...] | None = None

    def __post_init__(self):
        kind = ManifoldKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.dim not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dim}")
        if kind is ManifoldKind.TORUS:
            periods = self.periods if self.periods is not None else (TWO_PI,) * self.dim
            periods = tuple(float(x) for x in periods)
            if len(periods) != self.dim:
                raise ValueError("one period per axis is required")
            if any(not (x > 0 and math.isfinite(x)) for x in periods):
                raise ValueError("torus periods must be positive and finite")
            object.__setattr__(self, "periods", periods)
        else:
            object.__setattr__(self, "periods", None)

    @classmethod
    def torus(cls, dim: int = 1, periods: Sequence[float] | None = None) -> "ManifoldSpec":
        return cls(ManifoldKind.TORUS, dim, None if periods is None else tuple(periods))

    @classmethod
    def euclidean(cls, dim: int = 1) -> "ManifoldSpec":
        return cls(ManifoldKind.EUCLIDEAN, dim)

    @classmethod
    def from_config(cls, cfg: dict) -> "ManifoldSpec":
        """Build from ``{"manifold": "torus", "dim": 1, "periods": [...]}``."""
        kind = cfg.get("manifold", cfg.get("kind"))
        if kind is None:
            raise ValueError("manifold config needs a 'manifold' entry")
        periods = cfg.get("periods")
        return cls(ManifoldKind(str(kind).lower()), int(cfg.get("dim", 1)),
                   None if periods is None else tuple(periods))

    def to_config(self) -> dict:
        out = {"manifold": self.kind.value, "dim": self.dim}
        if self.periods is not None:
            out["periods"] = list(self.periods)
        return out

    @property
    def is_torus(self) -> bool:
        return self.kind is ManifoldKind.TORUS

    @property
    def period_array(self) -> np.ndarray:
        if self.periods is None:
            return np.full(self.dim, np.inf)
        return np.asarray(self.periods, dtype=float)


def reduce(q, m: ManifoldSpec) -> tuple[np.ndarray, np.ndarray]:
    """Reduce raw coordinates into the fundamental domain.

    Returns ``(reduced, winding)`` with ``raw = reduced + winding * period``
    componentwise. Works on arrays of shape ``(..., n)``. On a Euclidean
    manifold this is the identity with zero winding.
    """
    q = np.asarray(q, dtype=float)
    if q.shape[-1:] != (m.dim,):
        raise ValueError(f"coordinate length {q.shape[-1:] or ()} does not match dim {m.dim}")
    if not m.is_torus:
        return q.copy(), np.zeros(q.shape, dtype=int)
    period = m.period_array
    inside = (q >= 0.0) & (q < period)
    winding = np.floor(q / period)
    red = q - winding * period
    # rounding can land exactly on the period or slightly below zero
    under = red < 0.0
    red = np.where(under, red + period, red)
    winding = np.where(under, winding - 1, winding)
    over = red >= period
    red = np.where(over, red - period, red)
    winding = np.where(over, winding + 1, winding)
    red = np.where(inside, q, red)
    winding = np.where(inside, 0, winding).astype(int)
    return red, winding


def chart_delta(a, b, m: ManifoldSpec) -> np.ndarray:
    """Componentwise shortest displacement magnitude between base points."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    if m.is_torus:
        period = m.period_array
        d = np.mod(d, period)
        d = np.minimum(d, period - d)
    return d


def base_distance(a, b, m: ManifoldSpec) -> np.ndarray:
    return np.linalg.norm(chart_delta(a, b, m), axis=-1)


@dataclass(frozen=True)
class PhasePoint:
    """A point (q, p) of T*M; q is reduced on the torus."""

    q: np.ndarray
    p: np.ndarray
    manifold: ManifoldSpec | None = None

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if q.shape != p.shape or q.ndim != 1:
            raise ValueError("q and p must be vectors of equal length")
        if self.manifold is not None:
            q, _ = reduce(q, self.manifold)
        object.__setattr__(self, "q", _readonly(q))
        object.__setattr__(self, "p", _readonly(p))

    @property
    def dim(self) -> int:
        return self.q.shape[0]


@dataclass(frozen=True)
class TangentPoint:
    """A point (q, v) of TM; q is reduced on the torus."""

    q: np.ndarray
    v: np.ndarray
    manifold: ManifoldSpec | None = None

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        if q.shape != v.shape or q.ndim != 1:
            raise ValueError("q and v must be vectors of equal length")
        if self.manifold is not None:
            q, _ = reduce(q, self.manifold)
        object.__setattr__(self, "q", _readonly(q))
        object.__setattr__(self, "v", _readonly(v))

    @property
    def dim(self) -> int:
        return self.q.shape[0]


class NodeKind(str, enum.Enum):
    PHASE = "phase"
    TANGENT = "tangent"


@dataclass(frozen=True)
class DiscretizedArc:
    """Uniform-grid samples of an arc.

    ``q`` holds the unwrapped lift (shape ``(N, n)``) so finite differences
    never jump across the periodic seam; ``fiber`` holds momenta (PHASE) or
    velocities (TANGENT), or is ``None`` for a bare configuration track.
    """

    t0: float
    t1: float
    q: np.ndarray
    fiber: np.ndarray | None
    kind: NodeKind
    manifold: ManifoldSpec
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.ndim == 1:
            q = q[:, None]
        if not (self.t1 > self.t0):
            raise ValueError("arc needs t0 < t1")
        if q.shape[0] < 2:
            raise ValueError("arc needs at least 2 nodes")
        if q.shape[1] != self.manifold.dim:
            raise ValueError("node dimension does not match manifold")
        object.__setattr__(self, "q", _readonly(q))
        if self.fiber is not None:
            f = np.asarray(self.fiber, dtype=float)
            if f.ndim == 1:
                f = f[:, None]
            if f.shape != q.shape:
                raise ValueError("fiber samples must match base samples")
            object.__setattr__(self, "fiber", _readonly(f))
        object.__setattr__(self, "kind", NodeKind(self.kind))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "t1", float(self.t1))

    @property
    def N(self) -> int:
        return self.q.shape[0]

    @property
    def h(self) -> float:
        return (self.t1 - self.t0) / (self.N - 1)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.N)

    @property
    def reduced_q(self) -> np.ndarray:
        return reduce(self.q, self.manifold)[0]

    @property
    def windings(self) -> np.ndarray:
        return reduce(self.q, self.manifold)[1]

    def node(self, i: int) -> PhasePoint | TangentPoint:
        if self.fiber is None:
            raise ValueError("arc has no fiber samples")
        cls = PhasePoint if self.kind is NodeKind.PHASE else TangentPoint
        return cls(self.q[i], self.fiber[i], self.manifold)

    def base_velocity(self) -> np.ndarray:
        """Second-order finite-difference velocity of the lift."""
        return np.gradient(self.q, self.h, axis=0, edge_order=2)

    def with_fiber(self, fiber, kind: NodeKind, **meta) -> "DiscretizedArc":
        return DiscretizedArc(self.t0, self.t1, self.q, fiber, kind, self.manifold,
                              {**self.meta, **meta})

    def to_csv(self, path) -> None:
        n = self.manifold.dim
        head = ["t"] + [f"q{i + 1}" for i in range(n)]
        if self.fiber is not None:
            letter = "p" if self.kind is NodeKind.PHASE else "v"
            head += [f"{letter}{i + 1}" for i in range(n)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(head)
            for i, t in enumerate(self.times):
                row = [t, *self.q[i]]
                if self.fiber is not None:
                    row += list(self.fiber[i])
                w.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path, manifold: ManifoldSpec) -> "DiscretizedArc":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head, data = rows[0], np.array(rows[1:], dtype=float)
        n = manifold.dim
        kind = NodeKind.TANGENT if len(head) > 1 + n and head[1 + n].startswith("v") else NodeKind.PHASE
        fiber = data[:, 1 + n:1 + 2 * n] if len(head) > 1 + n else None
        return cls(data[0, 0], data[-1, 0], data[:, 1:1 + n], fiber, kind, manifold)


def _check_same_grid(a: DiscretizedArc, b: DiscretizedArc) -> None:
    if a.N != b.N or not math.isclose(a.t0, b.t0, abs_tol=1e-12) \
            or not math.isclose(a.t1, b.t1, abs_tol=1e-12):
        raise GridMismatchError(f"grids differ: [{a.t0}, {a.t1}]x{a.N} vs [{b.t0}, {b.t1}]x{b.N}")
    if a.kind is not b.kind:
        raise GridMismatchError("node kinds differ")
    if a.manifold != b.manifold:
        raise GridMismatchError("manifolds differ")


def arc_distance_C0(a: DiscretizedArc, b: DiscretizedArc) -> float:
    """Max over nodes of the chart (geodesic on the torus) base distance."""
    _check_same_grid(a, b)
    return float(np.max(base_distance(a.q, b.q, a.manifold)))


def arc_fiber_distance_C0(a: DiscretizedArc, b: DiscretizedArc) -> float:
    _check_same_grid(a, b)
    if a.fiber is None or b.fiber is None:
        raise ValueError("both arcs need fiber samples")
    return float(np.max(np.linalg.norm(a.fiber - b.fiber, axis=-1)))


def trapezoid(values: np.ndarray, h: float) -> float:
    values = np.asarray(values, dtype=float)
    return float(h * (values.sum() - 0.5 * (values[0] + values[-1])))


def arc_distance_L2(a: DiscretizedArc, b: DiscretizedArc, component: str = "fiber") -> float:
    """Trapezoid approximation of (int |a(t) - b(t)|^2 dt)^(1/2)."""
    _check_same_grid(a, b)
    if component == "fiber":
        if a.fiber is None or b.fiber is None:
            raise ValueError("both arcs need fiber samples")
        sq = np.sum((a.fiber - b.fiber) ** 2, axis=-1)
    elif component == "base":
        sq = np.sum(chart_delta(a.q, b.q, a.manifold) ** 2, axis=-1)
    else:
        raise ValueError(f"unknown component {component!r}")
    return math.sqrt(max(trapezoid(sq, a.h), 0.0))


@dataclass(frozen=True)
class Box:
    """Axis-aligned compact box in (base, fiber) coordinates.

    The same type serves T*M boxes (fiber = p) and TM boxes (fiber = v).
    """

    q: tuple[tuple[float, float], ...]
    p: tuple[tuple[float, float], ...]

    def __post_init__(self):
        q = tuple((float(lo), float(hi)) for lo, hi in self.q)
        p = tuple((float(lo), float(hi)) for lo, hi in self.p)
        if len(q) != len(p):
            raise ValueError("box needs as many fiber ranges as base ranges")
        if any(hi < lo for lo, hi in q + p):
            raise ValueError("box bounds must satisfy lo <= hi")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @classmethod
    def around(cls, m: ManifoldSpec, p_radius: float, q_bounds=None) -> "Box":
        if q_bounds is None:
            if m.is_torus:
                q_bounds = [(0.0, per) for per in m.periods]
            else:
                q_bounds = [(-p_radius, p_radius)] * m.dim
        return cls(tuple(q_bounds), tuple([(-p_radius, p_radius)] * m.dim))

    @classmethod
    def from_config(cls, cfg: dict) -> "Box":
        return cls(tuple(map(tuple, cfg["q"])), tuple(map(tuple, cfg["p"])))

    def to_config(self) -> dict:
        return {"q": [list(b) for b in self.q], "p": [list(b) for b in self.p]}

    @property
    def dim(self) -> int:
        return len(self.q)

    def grid_per_axis_default(self) -> int:
        # 64 per axis in the 2-d phase plane; coarser in 4-d to stay tractable
        return 64 if self.dim == 1 else 12

    def sample(self, grid_per_axis: int | None = None, n_random: int = 1000,
               seed: int = 0, periodic_q: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Deterministic grid plus seeded uniform samples.

        Returns arrays ``(Q, P)`` of shape ``(M, n)``. With ``periodic_q`` the
        base grid omits the upper endpoint (it duplicates the lower one).
        """
        g = self.grid_per_axis_default() if grid_per_axis is None else grid_per_axis
        n = self.dim
        axes = []
        for lo, hi in self.q:
            axes.append(np.linspace(lo, hi, g, endpoint=not periodic_q) if g > 1 else np.array([lo]))
        for lo, hi in self.p:
            axes.append(np.linspace(lo, hi, g) if g > 1 else np.array([lo]))
        pts = [np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=-1)] if g > 0 else []
        if n_random > 0:
            rng = np.random.default_rng(seed)
            lo = np.array([b[0] for b in self.q + self.p])
            hi = np.array([b[1] for b in self.q + self.p])
            pts.append(lo + (hi - lo) * rng.random((n_random, 2 * n)))
        allpts = np.concatenate(pts, axis=0)
        return allpts[:, :n], allpts[:, n:]


def as_vector(x: float | Iterable[float]) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))
