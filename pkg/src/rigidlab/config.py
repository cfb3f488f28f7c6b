"""TOML run configurations.

Sections: ``[manifold]`` (kind, dim, periods), ``[sequences.F]`` and
``[sequences.G]`` (family, limit), an optional ``[hamiltonian]`` (source) for
single-Hamiltonian subcommands, and ``[experiment]`` with ks, box, base_points,
tau, T, mode, seed, declared_bracket_limit, dt and ``[experiment.tolerances]``.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dsl import DSLError, HamiltonianExpr, HamiltonianSequence, PeriodicityError, parse
from .geometry import Box, ManifoldSpec, PhasePoint
from .rigidity import DEFAULT_TOLERANCES, Mode, RigidityExperiment


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    name: str
    manifold: ManifoldSpec
    F_seq: HamiltonianSequence | None
    G_seq: HamiltonianSequence | None
    hamiltonian: HamiltonianExpr | None
    ks: list[int]
    box: Box
    base_points: list[PhasePoint]
    tau: float = 0.2
    T: float = 1.0
    dt: float = 1e-3
    mode: Mode = Mode.TONELLI
    seed: int = 0
    declared_bracket_limit: HamiltonianExpr | None = None
    tolerances: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)
    expressions: dict[str, str] = field(default_factory=dict)

    @property
    def subject(self) -> HamiltonianExpr:
        """The single Hamiltonian for flow/hj: [hamiltonian] or the limit of F."""
        if self.hamiltonian is not None:
            return self.hamiltonian
        if self.F_seq is not None:
            return self.F_seq.limit
        raise ConfigError("config defines neither [hamiltonian] nor [sequences.F]")

    def require_F(self) -> HamiltonianSequence:
        if self.F_seq is None:
            raise ConfigError("this subcommand needs [sequences.F]")
        return self.F_seq

    def experiment(self) -> RigidityExperiment:
        if self.G_seq is None:
            raise ConfigError("the rigidity experiment needs [sequences.G]")
        return RigidityExperiment(self.require_F(), self.G_seq, self.box, self.ks,
                                  self.base_points, self.tau, self.T, self.mode,
                                  self.declared_bracket_limit, self.seed, dict(self.tolerances),
                                  self.name)


def _expr(source, m: ManifoldSpec, where: str) -> HamiltonianExpr:
    if not isinstance(source, str):
        raise ConfigError(f"{where}: expected an expression string")
    try:
        return parse(source, m)
    except (DSLError, PeriodicityError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _sequence(cfg: dict, m: ManifoldSpec, name: str) -> HamiltonianSequence:
    if "family" not in cfg:
        raise ConfigError(f"[sequences.{name}] needs 'family'")
    fam = _expr(cfg["family"], m, f"sequences.{name}.family")
    lim = _expr(cfg.get("limit", cfg["family"]), m, f"sequences.{name}.limit")
    try:
        return HamiltonianSequence(fam, lim)
    except ValueError as exc:
        raise ConfigError(f"[sequences.{name}]: {exc}") from exc


def _point(d, m: ManifoldSpec, i: int) -> PhasePoint:
    try:
        return PhasePoint(d["q"], d["p"], m)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"experiment.base_points[{i}] needs q and p of length {m.dim}") from exc


def from_dict(raw: dict, name: str = "run") -> RunConfig:
    try:
        m = ManifoldSpec.from_config(raw.get("manifold", {"kind": "torus", "dim": 1}))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"[manifold]: {exc}") from exc
    seqs = raw.get("sequences", {})
    F = _sequence(seqs["F"], m, "F") if "F" in seqs else None
    G = _sequence(seqs["G"], m, "G") if "G" in seqs else None
    H = _expr(raw["hamiltonian"]["source"], m, "hamiltonian.source") if "hamiltonian" in raw else None
    if F is None and G is None and H is None:
        raise ConfigError("config defines no Hamiltonian")
    ex = raw.get("experiment", {})
    ks = ex.get("ks", [4, 8, 16, 32, 64, 128, 256])
    if not isinstance(ks, list) or not ks or any(not isinstance(k, int) or k < 1 for k in ks):
        raise ConfigError("experiment.ks must be a non-empty list of positive integers")
    try:
        box = Box.from_config(ex["box"]) if "box" in ex else Box.around(m, 2.0)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"experiment.box: {exc}") from exc
    if box.dim != m.dim:
        raise ConfigError("experiment.box dimension does not match the manifold")
    pts = [_point(d, m, i) for i, d in enumerate(ex.get("base_points", [{"q": [0.5] * m.dim,
                                                                           "p": [1.0] * m.dim}]))]
    declared = ex.get("declared_bracket_limit")
    declared = _expr(declared, m, "experiment.declared_bracket_limit") if declared else None
    tol = dict(ex.get("tolerances", {}))
    unknown = set(tol) - set(DEFAULT_TOLERANCES)
    if unknown:
        raise ConfigError(f"unknown tolerances: {sorted(unknown)}")
    try:
        mode = Mode(ex.get("mode", "tonelli"))
    except ValueError as exc:
        raise ConfigError(f"experiment.mode must be one of {[x.value for x in Mode]}") from exc
    nums = {}
    for key, default in (("tau", 0.2), ("T", 1.0), ("dt", 1e-3)):
        v = ex.get(key, default)
        if not isinstance(v, (int, float)) or not v > 0 or not math.isfinite(v):
            raise ConfigError(f"experiment.{key} must be a positive number")
        nums[key] = float(v)
    seed = ex.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("experiment.seed must be an integer")
    exprs = {}
    for label, s in (("F", F), ("G", G)):
        if s is not None:
            exprs[f"{label}.family"] = s.family.source()
            exprs[f"{label}.limit"] = s.limit.source()
    if H is not None:
        exprs["hamiltonian"] = H.source()
    if declared is not None:
        exprs["declared_bracket_limit"] = declared.source()
    return RunConfig(raw.get("name", name), m, F, G, H, sorted(ks), box, pts, nums["tau"],
                     nums["T"], nums["dt"], mode, seed, declared, tol, raw, exprs)


def load(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(raw, path.stem)


def shipped_configs() -> dict[str, Path]:
    """Configs installed with the package, by stem."""
    here = Path(__file__).parent / "configs"
    return {p.stem: p for p in sorted(here.glob("*.toml"))}
