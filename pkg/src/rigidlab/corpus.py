"""Shipped Hamiltonians and sequences used by tests, configs and the CLI."""

from __future__ import annotations

from .dsl import HamiltonianExpr, HamiltonianSequence, parse
from .geometry import Box, ManifoldSpec

T1 = ManifoldSpec.torus(1)
T2 = ManifoldSpec.torus(2)
R1 = ManifoldSpec.euclidean(1)

HAMILTONIANS: dict[str, tuple[str, ManifoldSpec]] = {
    "free": ("0.5*p1^2", T1),
    "pendulum": ("0.5*p1^2 + cos(q1)", T1),
    "cosh-fiber": ("cosh(p1)", R1),
    "coupled": ("0.5*p1^2 + 0.25*sin(4*q1)*sin(p1)", T1),
    "free-2d": ("0.5*(p1^2 + p2^2)", T2),
    "pendulum-2d": ("0.5*(p1^2 + p2^2) + cos(q1) + 0.5*cos(q2)", T2),
    "coupled-2d": ("0.5*(p1^2 + p2^2) + 0.25*sin(q1 - q2)*sin(p1 + p2)", T2),
}

SEQUENCES: dict[str, tuple[str, str, ManifoldSpec]] = {
    # C0- but not C1-convergent: the force cos(kq) does not vanish
    "oscillating": ("0.5*p1^2 + (1/k)*sin(k*q1)", "0.5*p1^2", T1),
    # C1-convergent
    "damped": ("0.5*p1^2 + (1/k)*sin(q1)", "0.5*p1^2", T1),
    # fiber derivative converges at rate 1/k
    "fiber-oscillating": ("0.5*p1^2 + (1/k)*sin(k*q1)*sin(p1)", "0.5*p1^2", T1),
}


def names_on(m: ManifoldSpec) -> list[str]:
    return [name for name, (_, mm) in HAMILTONIANS.items() if mm == m]


def hamiltonian(name: str) -> HamiltonianExpr:
    src, m = HAMILTONIANS[name]
    return parse(src, m)


def sequence(name: str) -> HamiltonianSequence:
    fam, lim, m = SEQUENCES[name]
    return HamiltonianSequence.parse(fam, lim, m)


def default_box(H: HamiltonianExpr, p_radius: float = 2.0) -> Box:
    """Full torus (or [-2, 2]^n) in q times [-p_radius, p_radius]^n in p."""
    return Box.around(H.manifold, p_radius)
