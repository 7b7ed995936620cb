"""Log-log error-scaling figures from study results."""
from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import ExperimentResult, fit_slope  # noqa: E402
from .serialization import write_atomic  # noqa: E402

LABELS = {
    "theta_matrix_err": r"$\|\hat\Theta - \Theta^\star\|_{2,\infty}$",
    "theta_vector_max_mse": r"$\max_i \mathrm{MSE}(\hat\theta^{(i)}, \theta^{\star(i)})$",
    "delta_v_max_sq_err": r"$\max_i \|\widehat{\Delta v}^{(i)} - \Delta v^{(i)}\|_2^2$",
    "phi_mse": r"$\mathrm{MSE}(\hat\phi, \phi^\star)$",
    "final_loss": "final loss",
}

STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "savefig.dpi": 150,
}


def plot_metric(ax, summary, metric, with_slopes=True):
    """One panel: mean +- 1 standard error against n, one line per (p, p_v)."""
    rows = [r for r in summary if r["metric"] == metric]
    for key in sorted({(r["p"], r["p_v"]) for r in rows}):
        pts = sorted((r for r in rows if (r["p"], r["p_v"]) == key), key=lambda r: r["n"])
        n = [r["n"] for r in pts]
        mean = [r["mean"] for r in pts]
        se = [0.0 if r["stderr"] != r["stderr"] else r["stderr"] for r in pts]
        label = f"p={key[0]}, $p_v$={key[1]}"
        good = [(x, y) for x, y in zip(n, mean) if y > 0]
        if with_slopes and len(good) >= 2:
            label += f" (slope {fit_slope(good)[0]:.2f})"
        ax.errorbar(n, mean, yerr=se, marker="o", ms=3, lw=1, capsize=2, label=label)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel(LABELS.get(metric, metric))
    ax.legend(fontsize=7)


def figure_for(result: ExperimentResult):
    summary = result.summary()
    metrics = list(dict.fromkeys(r["metric"] for r in result.records))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.2 * len(metrics), 2.8), squeeze=False)
        for ax, m in zip(axes[0], metrics):
            plot_metric(ax, summary, m)
        fig.tight_layout()
    return fig


def save_figures(result: ExperimentResult, out_dir, stem="scaling"):
    """Write ``<stem>.png`` and ``<stem>.pdf`` atomically; returns the paths."""
    out_dir = Path(out_dir)
    fig = figure_for(result)
    paths = []
    try:
        for ext, meta in (("png", {"Software": None}), ("pdf", {"Creator": None, "Producer": None,
                                                               "CreationDate": None})):
            buf = io.BytesIO()
            fig.savefig(buf, format=ext, metadata=meta)
            path = out_dir / f"{stem}.{ext}"
            write_atomic(path, buf.getvalue())
            paths.append(path)
    finally:
        plt.close(fig)
    return paths
