"""Report assembly and emission: report.csv (long format), report.json,
arcs/*.csv with JSON sidecars, and PNG figures next to them."""

from __future__ import annotations

import csv
import json
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from . import __version__
from .common import Verdict, jsonable
from .geometry import DiscretizedArc
from .rigidity import Finding

CSV_HEADER = ("section", "name", "base_point", "k", "quantity", "value", "verdict")


def fmt(v) -> str:
    """Deterministic text for a CSV cell: repr for floats, lowercase booleans."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.ndarray):
        return " ".join(fmt(x) for x in v.ravel())
    return str(v)


@dataclass
class Run:
    """Everything a subcommand produced, before it is written out."""

    subcommand: str
    config_name: str
    rows: list[tuple] = field(default_factory=list)
    findings: list[Finding] = field(default_factory=list)
    payload: dict = field(default_factory=dict)
    arcs: dict[str, DiscretizedArc] = field(default_factory=dict)
    figures: dict[str, Callable[[Path], object]] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    def add_rows(self, section: str, name: str, records, base_point="", skip=("k",)):
        """Expand dict records into long-format rows; ``k`` comes from the record."""
        for rec in records:
            k = rec.get("k", "")
            bp = rec.get("base_point", base_point)
            for key, v in rec.items():
                if key in skip or key == "base_point":
                    continue
                self.rows.append((section, name, bp, k, key, v, ""))

    def add(self, section: str, name: str, verdict: Verdict, **detail) -> Finding:
        f = Finding(section, name, Verdict(verdict), detail)
        self.findings.append(f)
        return f

    @property
    def verdict(self) -> Verdict:
        vs = [f.verdict for f in self.findings]
        if Verdict.FAIL in vs:
            return Verdict.FAIL
        if Verdict.NOT_MET in vs:
            return Verdict.NOT_MET
        return Verdict.PASS

    def exit_code(self) -> int:
        return 2 if self.verdict is Verdict.FAIL else 0


def _versions() -> dict:
    import matplotlib
    return {"rigidlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__, "python": platform.python_version()}


def write(run: Run, out_dir, config_summary: dict) -> dict[str, list[str]]:
    """Write the run into ``out_dir``; returns the relative paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {"csv": [], "json": [], "arcs": [], "figures": []}
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in run.rows:
            w.writerow([fmt(x) for x in row])
        for f in run.findings:
            w.writerow([f.section, f.name, "", "", "verdict", "", f.verdict.value])
        w.writerow(["summary", "overall", "", "", "verdict", "", run.verdict.value])
    written["csv"].append("report.csv")
    if run.arcs:
        (out / "arcs").mkdir(exist_ok=True)
    for name, arc in sorted(run.arcs.items()):
        arc.to_csv(out / "arcs" / f"{name}.csv")
        side = {"name": name, "t0": arc.t0, "t1": arc.t1, "N": arc.N, "kind": arc.kind.value,
                "manifold": arc.manifold.to_config(),
                "meta": {k: v for k, v in arc.meta.items() if not isinstance(v, np.ndarray)}}
        (out / "arcs" / f"{name}.json").write_text(
            json.dumps(jsonable(side), indent=2, sort_keys=True) + "\n")
        written["arcs"].append(f"arcs/{name}.csv")
    for name, draw in sorted(run.figures.items()):
        path = out / f"{name}.png"
        try:
            draw(path)
            written["figures"].append(path.name)
        except Exception as exc:  # a figure never sinks a report
            run.errors.append(f"figure {name}: {type(exc).__name__}: {exc}")
    doc = {
        "tool": "rigidlab",
        "subcommand": run.subcommand,
        "config": config_summary,
        "verdict": run.verdict.value,
        "findings": [f.to_dict() for f in run.findings],
        "results": jsonable(run.payload),
        "errors": run.errors,
        "files": written,
        "versions": _versions(),
    }
    (out / "report.json").write_text(json.dumps(jsonable(doc), indent=2, sort_keys=True) + "\n")
    written["json"].append("report.json")
    return written
