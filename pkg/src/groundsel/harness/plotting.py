"""Report figures. SVG text stays text so numeric labels are searchable."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..selection import ErrTable, rank  # noqa: E402

RC = {
    "svg.fonttype": "none",
    "svg.hashsalt": "groundsel",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.0,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"Date": None} if path.suffix == ".svg" else {}
    fig.savefig(path, metadata=meta, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_err_table(table: ErrTable, path, title: str = "", highlight: int = 3) -> Path:
    """Per-event ERR and its running maximum, one line per model.

    The ``highlight`` best models by final cumulative max are labelled with
    their score.
    """
    x = np.arange(1, len(table.event_ids) + 1)
    cm = table.cumulative_max
    best = rank(table).model_ids[:highlight] if table.event_ids else ()
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.6), sharex=True)
        for m, mid in enumerate(table.model_ids):
            hot = mid in best
            kw = dict(color="C3" if hot else "0.6", alpha=1.0 if hot else 0.5, zorder=3 if hot else 1,
                      marker="o" if len(x) < 20 else None, markersize=3)
            axes[0].plot(x, table.err[m], **kw)
            axes[1].plot(x, cm[m], **kw)
            if hot:
                axes[1].annotate(f"{mid} {cm[m, -1]:.4g}", (x[-1], cm[m, -1]), xytext=(4, 0),
                                 textcoords="offset points", fontsize=7, va="center")
        axes[0].set_ylabel("ERR")
        axes[0].set_title("per event")
        axes[1].set_ylabel("max ERR so far")
        axes[1].set_title("cumulative maximum")
        for ax in axes:
            ax.set_xlabel("event")
            ax.set_xticks(x, list(table.event_ids), rotation=45 if len(x) > 6 else 0)
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_inputs(true, estimates: dict, path, component: int = 0, title: str = "") -> Path:
    """Incident-wave component against model-based reconstructions."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(7, 3))
        ax.plot(true.times, true.samples[:, component], color="k", label="true", lw=1.6)
        for k, (label, w) in enumerate(estimates.items()):
            ax.plot(w.times, w.samples[:, component], color=f"C{k}", label=label, lw=1.0)
        ax.set_xlabel("time (s)")
        ax.set_ylabel(f"incident v{component + 1} (m/s)")
        ax.legend(frameon=False, fontsize=7)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_thickness(models: dict, path, stations=()) -> Path:
    """Sediment thickness maps on a shared colour scale."""
    n = len(models)
    vmax = max(float(m.field.values.max()) for m in models.values())
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.0), squeeze=False)
        for ax, (label, m) in zip(axes[0], models.items()):
            Lx, Ly = m.field.grid.extent
            im = ax.imshow(m.field.values.T, origin="lower", extent=(0, Lx, 0, Ly), vmin=0, vmax=vmax,
                           cmap="viridis")
            if len(stations):
                s = np.asarray(stations)
                ax.plot(s[:, 0], s[:, 1], "w^", ms=4)
            ax.set_title(label)
            ax.set_xlabel("x1 (m)")
        axes[0, 0].set_ylabel("x2 (m)")
        fig.colorbar(im, ax=axes[0].tolist(), label="thickness (m)", shrink=0.85)
        return _save(fig, path)


def plot_layout_summary(rows, path) -> Path:
    """Median and best ERR against station count."""
    rows = sorted(rows, key=lambda r: r["n_station"])
    n = [r["n_station"] for r in rows]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ax.plot(n, [r["median_err"] for r in rows], "o-", label="median")
        ax.plot(n, [r["best_err"] for r in rows], "s-", label="best")
        for x, r in zip(n, rows):
            ax.annotate(f"{r['median_err']:.3g}", (x, r["median_err"]), xytext=(3, 3),
                        textcoords="offset points", fontsize=7)
        ax.set_xscale("log")
        ax.set_xticks(n, [str(v) for v in n])
        ax.set_xlabel("stations")
        ax.set_ylabel("max ERR over events")
        ax.legend(frameon=False)
        return _save(fig, path)
