"""File-based figure rendering for run reports.

Everything here draws to image files with the Agg backend; there is no
interactive display path.  Figures accompany the CSV artifacts so a run
directory is self-describing.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .density import DensityField
from .metrics import SweepRow

__all__ = [
    "plot_density_1d",
    "plot_density_2d",
    "plot_sweep",
    "plot_moment_series",
]

_SAVE_OPTS = {"dpi": 130, "bbox_inches": "tight"}


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)
    return path


def plot_density_1d(
    truth: DensityField,
    recovered: DensityField,
    path: str | Path,
    title: str = "",
    log_scale: bool = False,
) -> Path:
    """Overlay of reference and recovered 1D marginals."""
    x = truth.grid.axes[0].points()
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.plot(x, truth.values, color="k", lw=1.6, label="truth")
    ax.plot(x, recovered.values, color="tab:red", lw=1.4, ls="--", label="recovered")
    if log_scale:
        ax.set_yscale("log")
        floor = max(truth.values.max(), recovered.values.max()) * 1e-6
        ax.set_ylim(bottom=floor)
    ax.set_xlabel(truth.grid.axes[0].label)
    ax.set_ylabel("density")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    return _finish(fig, path)


def plot_density_2d(
    truth: DensityField,
    recovered: DensityField,
    path: str | Path,
    title: str = "",
) -> Path:
    """Side-by-side filled contours of a 2D marginal."""
    gx = truth.grid.axes[0].points()
    gy = truth.grid.axes[1].points()
    vmax = max(truth.values.max(), recovered.values.max())
    levels = np.linspace(0.0, vmax, 21)
    fig, axes = plt.subplots(1, 2, figsize=(8.4, 3.4), sharex=True, sharey=True)
    for ax, field, name in ((axes[0], truth, "truth"), (axes[1], recovered, "recovered")):
        cs = ax.contourf(gx, gy, field.values.T, levels=levels, cmap="viridis")
        ax.set_title(name)
        ax.set_xlabel(truth.grid.axes[0].label)
    axes[0].set_ylabel(truth.grid.axes[1].label)
    fig.colorbar(cs, ax=axes, shrink=0.9)
    if title:
        fig.suptitle(title)
    return _finish(fig, path)


def plot_sweep(rows: list[SweepRow], path: str | Path, title: str = "") -> Path:
    """Divergence versus ensemble size, log scale, one line per marginal."""
    fig, ax = plt.subplots(figsize=(5.4, 3.6))
    keys = sorted({(r.metric, r.variables) for r in rows})
    for metric, variables in keys:
        pts = sorted(
            (r.L, r.value) for r in rows if r.metric == metric and r.variables == variables
        )
        Ls = [p[0] for p in pts]
        vals = [max(p[1], 1e-12) for p in pts]
        style = "-o" if metric == "kl1d" else "--s"
        ax.semilogy(Ls, vals, style, ms=4, label=f"{variables} ({metric[-2:]})")
    ax.set_xlabel("ensemble size L")
    ax.set_ylabel("relative entropy (nats)")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=8, ncol=2)
    return _finish(fig, path)


def plot_moment_series(
    times: np.ndarray,
    recovered: dict[str, np.ndarray],
    reference: dict[str, np.ndarray],
    bands: dict[str, np.ndarray] | None,
    path: str | Path,
    ylabel: str,
    title: str = "",
) -> Path:
    """Time series of a statistic per variable, reference vs recovered.

    ``bands`` gives half-widths drawn around the reference curves.
    """
    fig, ax = plt.subplots(figsize=(5.6, 3.6))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, name in enumerate(sorted(recovered)):
        c = colors[i % len(colors)]
        ax.plot(times, reference[name], color=c, lw=1.5, label=f"{name} truth")
        ax.plot(times, recovered[name], color=c, lw=1.2, ls="--", label=f"{name} rec")
        if bands and name in bands:
            ax.fill_between(
                times,
                reference[name] - bands[name],
                reference[name] + bands[name],
                color=c,
                alpha=0.15,
                lw=0,
            )
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=7, ncol=2)
    return _finish(fig, path)
