"""Report figures, written next to the CSV/JSON outputs.

Figures are saved as PNG without software/date metadata so repeated runs
produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

REPORT_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "svg.hashsalt": "wig",
}


def new_figure(width=4.5, height=None, ncols=1):
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    with plt.rc_context(REPORT_RC):
        fig, ax = plt.subplots(1, ncols, figsize=(width, height or width * golden))
    return fig, ax


def save_figure(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(REPORT_RC):
        fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_mean_curves(curves: dict, path, ylabel: str, title: str = ""):
    """``curves`` maps a method label to ``(fractions, per-sample values)``."""
    with plt.rc_context(REPORT_RC):
        fig, ax = new_figure()
        for label, (fractions, values) in curves.items():
            values = np.asarray(values)
            mean = values.mean(axis=0)
            ax.plot(fractions, mean, label=f"{label}", lw=1.4)
            if values.shape[0] > 1:
                se = values.std(axis=0, ddof=1) / np.sqrt(values.shape[0])
                ax.fill_between(fractions, mean - se, mean + se, alpha=0.2, lw=0)
        ax.set_xlabel("fraction p")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
    return save_figure(fig, path)


def plot_auc_comparison(per_method: dict, path, metric: str):
    """Box plot of per-sample AUCs, one box per method."""
    labels = list(per_method)
    with plt.rc_context(REPORT_RC):
        fig, ax = new_figure()
        ax.boxplot([per_method[k] for k in labels], showmeans=True)
        ax.set_xticks(range(1, len(labels) + 1), labels)
        ax.set_ylabel(f"{metric} AUC")
        fig.tight_layout()
    return save_figure(fig, path)


def plot_theorem1_grid(rows: list, path):
    """Empirical failure rate vs the exponential bound, one line per margin."""
    with plt.rc_context(REPORT_RC):
        fig, ax = new_figure()
        margins = sorted({r["target_margin"] for r in rows})
        for i, margin in enumerate(margins):
            sel = sorted((r for r in rows if r["target_margin"] == margin and not r["skipped"]),
                         key=lambda r: r["m"])
            if not sel:
                continue
            m = [r["m"] for r in sel]
            color = f"C{i}"
            ax.plot(m, [r["hoeffding_bound"] for r in sel], "--", color=color, lw=1)
            ax.plot(m, [max(r["empirical_failure_rate"], 1e-5) for r in sel], "o-", color=color,
                    ms=3, lw=1.2, label=f"margin {margin:g}")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_ylim(1e-5, 1.5)
        ax.set_xlabel("samples m")
        ax.set_ylabel("P(q_hat_WG <= q_EG)")
        ax.legend(frameon=False, title="solid: empirical, dashed: bound")
        fig.tight_layout()
    return save_figure(fig, path)


def plot_saliency(values, path, cmap: str = "magma"):
    values = np.atleast_2d(np.asarray(values))
    with plt.rc_context(REPORT_RC):
        fig, ax = new_figure(3.0, 3.0)
        im = ax.imshow(values, cmap=cmap, interpolation="nearest")
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        fig.tight_layout()
    return save_figure(fig, path)
