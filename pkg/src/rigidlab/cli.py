"""Command line entry point.

    rigidlab <subcommand> --config run.toml --out runs/

Subcommands: parse-check, legendre, flow, minimize, hj, bracket, rigidity.
Exit status: 0 when no check failed (hypothesis-not-met is not a failure),
2 when any check failed, 1 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, plotting
from .common import Verdict, trend_to_zero
from .config import ConfigError, RunConfig, load
from .dsl import NotTonelliError, parse, require_tonelli
from .dsl import expr as E
from .dynamics import EscapeError, FlowSpec, epsilon_defect, integrate, phase_distance
from .geometry import PhasePoint
from .hj import (CharacteristicCrossingError, TOL_CALIBRATION, TOL_PDE, calibration_error, hj_solve,
                 l2_convergence_via_hj, young_equality_error, young_gap_check)
from .legendre import roc_table, roundtrip_error
from .report import Run, write
from .rigidity import bracket_values, flow_integral_identity_check, run_rigidity_experiment
from .variational import minimizer_convergence_experiment

log = logging.getLogger("rigidlab")

ROUNDTRIP_TOL = 1e-8
DRIFT_TOL = 1e-6


# -- subcommands

def cmd_parse_check(cfg: RunConfig, run: Run) -> None:
    """Every expression parsed when the config loaded; record round trips and shapes."""
    for label, src in cfg.expressions.items():
        H = parse(src, cfg.manifold)
        again = parse(E.to_source(H.node), cfg.manifold, validate=False)
        run.add("parse", label, Verdict.PASS if again.node == H.node else Verdict.FAIL,
                source=src, separable=H.is_separable(), has_parameter=H.has_parameter,
                dH_dq=[H.derivative(v).source() for v in H.qvars],
                dH_dp=[H.derivative(v).source() for v in H.pvars])
        run.rows.append(("parse", label, "", "", "source", src, ""))


def _certify(H, box, k=None, seed=0):
    try:
        return require_tonelli(H, box, k=k, seed=seed), None
    except NotTonelliError as exc:
        return exc.certificate, str(exc)


def cmd_legendre(cfg: RunConfig, run: Run) -> None:
    seq = cfg.require_F()
    members = [("limit", seq.limit)] + [(k, seq.instance(k)) for k in cfg.ks]
    bad = [label for label, H in members if _certify(H, cfg.box, seed=cfg.seed)[1]]
    if bad:
        run.add("hypothesis", "Tonelli certificates", Verdict.NOT_MET, failing=bad)
        return
    run.add("hypothesis", "Tonelli certificates", Verdict.PASS)
    worst = 0.0
    for label, H in members:
        err = roundtrip_error(H, cfg.box, seed=cfg.seed)
        worst = max(worst, err)
        run.rows.append(("legendre", "roundtrip", "", "" if label == "limit" else label,
                         "max_error", err, ""))
    run.add("check", "Legendre roundtrip", Verdict.PASS if worst <= ROUNDTRIP_TOL else Verdict.FAIL,
            max_error=worst, tolerance=ROUNDTRIP_TOL)
    table = roc_table(seq, cfg.box, cfg.ks, seed=cfg.seed, certify=False)
    recs = [{"k": r.k, **{h: getattr(r, h) for h in table.HEADER[1:]}} for r in table.rows]
    run.add_rows("convergence", "sup_deviation", recs)
    for col in table.HEADER[1:]:
        v = table.column(col)
        run.add("convergence", f"{col} trends to 0",
                Verdict.PASS if trend_to_zero(v) else Verdict.NOT_MET, values=v)
    run.payload["convergence"] = {"rows": recs, "method": table.method}
    run.figures["legendre_convergence"] = lambda p: plotting.convergence(
        {c: (table.column("k"), table.column(c)) for c in table.HEADER[1:]}, p,
        "Legendre data against k")


def cmd_flow(cfg: RunConfig, run: Run) -> None:
    H = cfg.subject
    portraits = {}
    for i, x in enumerate(cfg.base_points):
        try:
            arc = integrate(FlowSpec(H, 0.0, cfg.T, cfg.dt), x)
            back = integrate(FlowSpec(H, cfg.T, 0.0, cfg.dt),
                             PhasePoint(arc.q[-1], arc.fiber[-1], H.manifold))
        except EscapeError as exc:
            run.add("check", f"flow (base point {i})", Verdict.FAIL, error=str(exc))
            continue
        drift = arc.meta["energy_drift"]
        ret = float(phase_distance(back.q[0], back.fiber[0], x.q, x.p))
        run.arcs[f"bp{i}_flow"] = arc
        portraits[f"base point {i}"] = (arc.q, arc.fiber)
        run.rows += [("flow", "orbit", i, "", "energy_drift", drift, ""),
                     ("flow", "orbit", i, "", "return_error", ret, ""),
                     ("flow", "orbit", i, "", "defect", epsilon_defect(H, arc), "")]
        run.add("check", f"energy drift (base point {i})",
                Verdict.PASS if drift <= DRIFT_TOL else Verdict.FAIL, drift=drift, tolerance=DRIFT_TOL)
        if cfg.F_seq is not None and cfg.hamiltonian is None:
            for k in cfg.ks:
                Fk = cfg.F_seq.instance(k)
                try:
                    ak = integrate(FlowSpec(Fk, 0.0, cfg.T, cfg.dt), x)
                except EscapeError as exc:
                    run.errors.append(f"k={k}: {exc}")
                    continue
                d = float(np.max(phase_distance(ak.q, ak.fiber, arc.q, arc.fiber)))
                run.rows += [("flow", "sequence", i, k, "sup_phase_distance", d, ""),
                             ("flow", "sequence", i, k, "defect_vs_limit_field",
                              epsilon_defect(H, ak), "")]
    run.figures["flow_phase_portrait"] = lambda p: plotting.phase_portrait(portraits, p,
                                                                           f"orbits of {H.source()}")


def cmd_minimize(cfg: RunConfig, run: Run) -> None:
    seq = cfg.require_F()
    for i, x in enumerate(cfg.base_points):
        try:
            exp = minimizer_convergence_experiment(seq, x, cfg.ks, cfg.tau, seed=cfg.seed, box=cfg.box)
        except NotTonelliError as exc:
            run.add("hypothesis", f"Tonelli certificates (base point {i})", Verdict.NOT_MET,
                    error=str(exc))
            continue
        run.add_rows("orbit", "minimizers", [r.as_dict() for r in exp.rows], base_point=i)
        run.add("orbit", f"minimizers converge (base point {i})", exp.verdict, checks=exp.checks(),
                shrink_Q=exp.shrink("sup_Q_dev"), shrink_P=exp.shrink("L2_P_dev"),
                uniform_bound=exp.uniform_bound)
        run.arcs[f"bp{i}_limit"] = exp.limit_arc
        for k, res in exp.results.items():
            run.arcs[f"bp{i}_k{k}_minimizer"] = res.arc
        _figures_minimizers(run, f"bp{i}", exp)


def _figures_minimizers(run: Run, tag: str, exp) -> None:
    ks = exp.column("k")
    cols = {c: (ks, exp.column(c)) for c in ("sup_Q_dev", "L2_P_dev", "action_gap", "eps_hat")}
    run.figures[f"{tag}_minimizer_convergence"] = lambda p: plotting.convergence(
        cols, p, "minimizers of L_k against the limit orbit")
    tracks = {"limit": (exp.limit_arc.times, exp.limit_arc.q)}
    for k, res in sorted(exp.results.items()):
        tracks[f"k={k}"] = (res.arc.times, res.arc.q)
    run.figures[f"{tag}_minimizer_arcs"] = lambda p: plotting.arcs(tracks, p, "q1",
                                                                   "minimizing arcs")


def cmd_hj(cfg: RunConfig, run: Run) -> None:
    H = cfg.subject
    r = float(cfg.tolerances.get("hj_radius", 0.3))
    for i, x in enumerate(cfg.base_points):
        try:
            sol = hj_solve(H, x, r, cfg.tau)
        except CharacteristicCrossingError as exc:
            run.add("check", f"characteristics (base point {i})", Verdict.FAIL, error=str(exc))
            continue
        pde, cal = sol.pde_residual(), calibration_error(sol)
        young, gap = young_equality_error(sol), young_gap_check(sol, seed=cfg.seed)
        mixed = sol.mixed_partials_gap()
        for name, val in (("pde_residual", pde), ("calibration", cal), ("young_equality", young),
                          ("young_gap_margin", gap.min_margin), ("C_q", gap.C_q),
                          ("mixed_partials", mixed), ("min_separation", sol.min_separation)):
            run.rows.append(("hj", "local_solution", i, "", name, val, ""))
        for name, val, tol in (("PDE residual", pde, TOL_PDE), ("calibration", cal, TOL_CALIBRATION),
                               ("Young equality", young, 1e-6), ("mixed partials", mixed, 1e-3)):
            run.add("check", f"{name} (base point {i})",
                    Verdict.PASS if val <= tol else Verdict.FAIL, value=val, tolerance=tol)
        run.add("check", f"Young gap (base point {i})", Verdict.PASS if gap.passed else Verdict.FAIL,
                margin=gap.min_margin, C_q=gap.C_q)
        js, q, _ = sol.center_orbit(-sol.tau)
        run.figures[f"bp{i}_hj_fan"] = lambda p, sol=sol: plotting.arcs(
            {f"q'={s:.3f}": (sol.times, sol.Q[:, j]) for j, s in
             enumerate(sol.seeds[:, 0]) if j % 4 == 0}, p, "q1", "characteristic fan")
        if cfg.F_seq is not None and cfg.hamiltonian is None:
            rep = l2_convergence_via_hj(cfg.F_seq, x, cfg.ks, cfg.tau, r=r, seed=cfg.seed)
            run.add_rows("hj", "l2_inequality", [row.as_dict() for row in rep.rows], base_point=i)
            run.add("orbit", f"HJ L2 inequality (base point {i})", rep.verdict, checks=rep.checks())


def cmd_bracket(cfg: RunConfig, run: Run) -> None:
    if cfg.G_seq is None:
        raise ConfigError("bracket needs [sequences.G]")
    F, G = cfg.require_F().limit, cfg.G_seq.limit
    tol = float(cfg.tolerances.get("identity", 1e-6))
    for i, x in enumerate(cfg.base_points):
        try:
            chk = flow_integral_identity_check(F, G, x, cfg.T, dt=cfg.dt)
        except EscapeError as exc:
            run.add("check", f"bracket-flow identity (base point {i})", Verdict.FAIL, error=str(exc))
            continue
        run.rows += [("bracket", "flow_identity", i, "", "residual", chk.residual, ""),
                     ("bracket", "flow_identity", i, "", "raw_trapezoid_residual",
                      chk.raw_trapezoid_residual, "")]
        run.add("check", f"bracket-flow identity (base point {i})",
                Verdict.PASS if chk.residual <= tol else Verdict.FAIL, residual=chk.residual,
                tolerance=tol)
    q, p = cfg.box.sample(0, 200, cfg.seed)
    anti = float(np.max(np.abs(bracket_values(F, G, q, p) + bracket_values(G, F, q, p))))
    run.rows.append(("bracket", "antisymmetry", "", "", "max_abs", anti, ""))
    run.add("check", "antisymmetry", Verdict.PASS if anti == 0.0 else Verdict.FAIL, value=anti)
    base = bracket_values(F, G, q, p)
    recs = []
    for k in cfg.ks:
        Fk, Gk = cfg.F_seq.instance(k), cfg.G_seq.instance(k)
        recs.append({"k": k, "sup_bracket_dev": float(np.max(np.abs(bracket_values(Fk, Gk, q, p) - base)))})
    run.add_rows("bracket", "sequence", recs)


def cmd_rigidity(cfg: RunConfig, run: Run) -> None:
    rep = run_rigidity_experiment(cfg.experiment())
    run.add_rows("hypothesis", "sup_deviation", rep.hypothesis_rows)
    for r in rep.orbit_rows:
        run.add_rows("orbit", r["audit"], [{k: v for k, v in r.items() if k != "audit"}])
    run.add_rows("replay", "simple_principle", rep.replay_rows)
    run.rows.append(("conclusion", "{F,G} = H-hat", "", "", "sup_box", rep.conclusion_sup, ""))
    run.findings.extend(rep.findings)
    run.errors.extend(rep.errors)
    run.arcs.update(rep.arcs)
    ks = np.array([r["k"] for r in rep.hypothesis_rows], dtype=float)
    cols = {c: (ks, [r[c] for r in rep.hypothesis_rows])
            for c in rep.hypothesis_rows[0] if c != "k"}
    run.figures["hypothesis_convergence"] = lambda p: plotting.convergence(
        cols, p, "sup-box deviations against k")
    if rep.replay_rows:
        rk = np.array([r["k"] for r in rep.replay_rows], dtype=float)
        rc = {c: (rk, [r[c] for r in rep.replay_rows]) for c in ("term1", "term2",
                                                                  "telescoping_residual")}
        run.figures["replay_terms"] = lambda p: plotting.convergence(rc, p, "replay error terms")
    tracks = {name: (a.times, a.q) for name, a in sorted(rep.arcs.items())
              if name.endswith("_minimizer") or name.endswith("_limit")}
    if tracks:
        run.figures["orbit_arcs"] = lambda p: plotting.arcs(tracks, p, "q1", "limit orbit and minimizers")
    run.payload["conclusion_sup"] = rep.conclusion_sup
    run.payload["hypotheses_met"] = rep.hypotheses_met


COMMANDS = {
    "parse-check": cmd_parse_check,
    "legendre": cmd_legendre,
    "flow": cmd_flow,
    "minimize": cmd_minimize,
    "hj": cmd_hj,
    "bracket": cmd_bracket,
    "rigidity": cmd_rigidity,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="rigidlab", description="Poisson bracket rigidity experiments")
    ap.add_argument("--version", action="version", version=f"rigidlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=(fn.__doc__ or "").strip().split("\n")[0] or None)
        sp.add_argument("--config", required=True, type=Path, help="TOML run configuration")
        sp.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def _summary(cfg: RunConfig, path: Path) -> dict:
    return {"path": str(path), "name": cfg.name, "manifold": cfg.manifold.to_config(),
            "expressions": cfg.expressions, "ks": cfg.ks, "box": cfg.box.to_config(),
            "base_points": [{"q": x.q.tolist(), "p": x.p.tolist()} for x in cfg.base_points],
            "tau": cfg.tau, "T": cfg.T, "dt": cfg.dt, "mode": cfg.mode.value, "seed": cfg.seed,
            "tolerances": cfg.tolerances}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load(args.config)
        run = Run(args.command, cfg.name)
        COMMANDS[args.command](cfg, run)
    except ConfigError as exc:
        print(f"rigidlab: config error: {exc}", file=sys.stderr)
        return 1
    files = write(run, args.out, _summary(cfg, args.config))
    for f in run.findings:
        log.info("%-12s %-48s %s", f.section, f.name, f.verdict.value)
    for e in run.errors:
        print(f"rigidlab: {e}", file=sys.stderr)
    print(f"{args.command}: {run.verdict.value} ({len(files['csv']) + len(files['json'])} reports, "
          f"{len(files['arcs'])} arcs, {len(files['figures'])} figures in {args.out})")
    return run.exit_code()


if __name__ == "__main__":
    sys.exit(main())
