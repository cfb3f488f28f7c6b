"""Report figures. Rendering goes through the Agg backend so reports can be
produced on headless machines."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # fixed metadata keeps repeated renders identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def convergence(columns: dict[str, tuple], path, title: str = "") -> Path:
    """Log-log plot of deviation columns against k; ``columns`` maps a label to
    ``(ks, values)``. Zero values are drawn at the axis floor."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        plotted = False
        for label, (ks, vals) in columns.items():
            ks = np.asarray(ks, dtype=float)
            vals = np.abs(np.asarray(vals, dtype=float))
            good = np.isfinite(vals) & (vals > 0)
            if not np.any(good):
                continue
            ax.loglog(ks[good], vals[good], "o-", ms=3, label=label)
            plotted = True
        if plotted:
            ks_all = np.concatenate([np.asarray(c[0], dtype=float) for c in columns.values()])
            ref = np.unique(ks_all)
            ax.loglog(ref, ref[0] / ref, "k:", lw=0.8, label="1/k reference")
            ax.legend()
        ax.set_xlabel("k")
        ax.set_ylabel("sampled deviation")
        ax.set_title(title)
        return _save(fig, path)


def arcs(tracks: dict[str, tuple], path, ylabel: str = "q", title: str = "") -> Path:
    """Overlay of base tracks; ``tracks`` maps a label to ``(times, values)``
    with values ``(N,)`` or ``(N, n)`` (first component drawn)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for i, (label, (t, v)) in enumerate(tracks.items()):
            v = np.asarray(v)
            if v.ndim == 2:
                v = v[:, 0]
            ax.plot(t, v, lw=1.6 if i == 0 else 0.8, label=label)
        ax.set_xlabel("t")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if tracks:
            ax.legend()
        return _save(fig, path)


def phase_portrait(arcs_qp: dict[str, tuple], path, title: str = "") -> Path:
    """(q1, p1) curves; ``arcs_qp`` maps a label to ``(Q, P)``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, (Q, P) in arcs_qp.items():
            ax.plot(np.asarray(Q)[:, 0], np.asarray(P)[:, 0], lw=0.9, label=label)
        ax.set_xlabel("q1")
        ax.set_ylabel("p1")
        ax.set_title(title)
        if arcs_qp:
            ax.legend()
        return _save(fig, path)
