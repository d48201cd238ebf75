"""Report figures, written straight to image files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 110,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_trace(values, path, ylabel, title=None, xlabel="iteration"):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ax.plot(np.arange(len(values)), values, lw=1.2, color="#1f4e79")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_loss_trace(losses, path):
    return plot_trace(losses, path, "mean square error", "end-to-end refinement", xlabel="epoch")


def plot_em_trace(log_likelihoods, path):
    return plot_trace(log_likelihoods, path, "log-likelihood", "EM fit")


def plot_predictions(folds, scale, path, seed=0):
    """Held-out predicted vs. true scores, one panel per symptom plus the total."""
    names = list(scale.symptom_names) + ["total"]
    P = np.array([list(f.predicted.symptom_scores) + [f.predicted.total_score] for f in folds], float)
    T = np.array([list(f.truth.symptom_scores) + [f.truth.total_score] for f in folds], float)
    rng = np.random.default_rng(seed)
    with plt.rc_context(STYLE):
        ncol = min(len(names), 3)
        nrow = int(np.ceil(len(names) / ncol))
        fig, axes = plt.subplots(nrow, ncol, figsize=(3.2 * ncol, 3.0 * nrow), squeeze=False)
        for ax, j, name in zip(axes.flat, range(len(names)), names):
            lo, hi = (scale.total_min, scale.total_max) if name == "total" else (scale.min_score, scale.max_score)
            jitter = rng.uniform(-0.12, 0.12, size=(2, len(folds)))
            ax.scatter(T[:, j] + jitter[0], P[:, j] + jitter[1], s=12, alpha=0.7, color="#1f4e79")
            ax.plot([lo, hi], [lo, hi], color="0.6", lw=0.8, ls="--")
            ax.set_xlim(lo - 0.5, hi + 0.5)
            ax.set_ylim(lo - 0.5, hi + 0.5)
            ax.set_title(name.replace("_", " "))
            ax.set_xlabel("truth")
            ax.set_ylabel("predicted")
        for ax in list(axes.flat)[len(names):]:
            ax.axis("off")
        fig.tight_layout()
        return _save(fig, path)


def plot_correlation_heatmap(table, path):
    rho = table.rho_matrix()
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.0 + 0.9 * len(table.targets), 0.8 + 0.35 * len(table.expressions)))
        im = ax.imshow(np.ma.masked_invalid(rho), cmap="RdBu_r", vmin=-1, vmax=1, aspect="auto")
        ax.set_xticks(range(len(table.targets)))
        ax.set_xticklabels([t.replace("_", " ") for t in table.targets], rotation=40, ha="right")
        ax.set_yticks(range(len(table.expressions)))
        ax.set_yticklabels([e.replace("_", " ") for e in table.expressions])
        for i, row in enumerate(table.cells):
            for j, cell in enumerate(row):
                if cell is not None:
                    ax.text(j, i, str(cell), ha="center", va="center", fontsize=7)
        fig.colorbar(im, ax=ax, label="Spearman rho")
        return _save(fig, path)
