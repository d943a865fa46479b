"""Render the plot-data CSVs written by :func:`fkc.harness.emit_plot_data` to PNG.

matplotlib is imported here only, so the simulation core never needs it.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np


def _read(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if "source" in header:
        raw = np.genfromtxt(path, delimiter=",", skip_header=1, dtype=None, encoding=None)
        return header, raw
    return header, np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def render(plot_dir) -> list:
    """Write one PNG per available CSV in ``plot_dir``; returns the written paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plot_dir = Path(plot_dir)
    out = []

    if (plot_dir / "ess_curve.csv").exists():
        _, d = _read(plot_dir / "ess_curve.csv")
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(d[:, 1], d[:, 2], lw=1)
        ax.set_xlabel("t")
        ax.set_ylabel("ESS")
        fig.tight_layout()
        out.append(_save(fig, plot_dir / "ess_curve.png"))

    if (plot_dir / "heatmap.csv").exists():
        _, d = _read(plot_dir / "heatmap.csv")
        xs, ys = np.unique(d[:, 0]), np.unique(d[:, 1])
        fig, axes = plt.subplots(1, 2, figsize=(8, 3.8), sharey=True)
        for ax, col, title in zip(axes, (2, 3), ("samples", "reference")):
            grid = d[:, col].reshape(len(xs), len(ys)).T
            ax.imshow(grid, origin="lower", extent=(xs[0], xs[-1], ys[0], ys[-1]), cmap="viridis")
            ax.set_title(title)
        fig.tight_layout()
        out.append(_save(fig, plot_dir / "heatmap.png"))

    if (plot_dir / "scatter.csv").exists():
        _, d = _read(plot_dir / "scatter.csv")
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        for src, colour in (("reference", "0.6"), ("sample", "C0")):
            rows = d[d["f0"] == src] if d.dtype.names else d[:0]
            if len(rows):
                ax.scatter(rows["f1"], rows["f2"], s=2, c=colour, label=src)
        ax.legend(loc="upper right", markerscale=4)
        fig.tight_layout()
        out.append(_save(fig, plot_dir / "scatter.png"))

    if (plot_dir / "energy_hist.csv").exists():
        _, d = _read(plot_dir / "energy_hist.csv")
        fig, ax = plt.subplots(figsize=(5, 3.2))
        width = d[:, 1] - d[:, 0]
        ax.step(d[:, 0], d[:, 2] / width, where="post", label="samples")
        if np.all(np.isfinite(d[:, 3])):
            ax.step(d[:, 0], d[:, 3] / width, where="post", label="reference")
        ax.set_xlabel("energy")
        ax.legend()
        fig.tight_layout()
        out.append(_save(fig, plot_dir / "energy_hist.png"))
    return out


def _save(fig, path):
    import matplotlib.pyplot as plt

    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
