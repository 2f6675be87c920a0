"""PNG figures for experiment outputs (non-interactive Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.5,
    "savefig.dpi": 120,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_metric_series(series_list, path, title: str | None = None, logy: bool = False) -> Path:
    """One panel per metric; ``series_list`` holds :class:`MetricSeries`."""
    with plt.rc_context(STYLE):
        n = len(series_list)
        fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.0), squeeze=False)
        for ax, s in zip(axes[0], series_list):
            ax.plot(s.iter, s.value)
            ax.set_xlabel("iteration")
            ax.set_title(s.name)
            if logy and np.all(np.asarray(s.value) > 0):
                ax.set_yscale("log")
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_samples(positions, path, labels=("u1", "u2"), reference=None) -> Path:
    """Scatter of the first two coordinates of the final particles."""
    q = np.asarray(positions)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.6))
        ax.scatter(q[0], q[1], s=4, alpha=0.5, label="particles")
        if reference is not None:
            ax.plot(reference[0], reference[1], "k+", markersize=12, label="reference")
            ax.legend(loc="best")
        ax.set_xlabel(labels[0])
        ax.set_ylabel(labels[1])
        return _save(fig, path)


def plot_gamma_sweep(gammas, gaps, path, optimum=None) -> Path:
    """Spectral gap against damping on a log axis."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.2))
        ax.semilogx(gammas, gaps)
        if optimum is not None:
            ax.axvline(optimum, color="k", ls="--", lw=1)
        ax.set_xlabel("gamma")
        ax.set_ylabel("spectral gap")
        return _save(fig, path)
