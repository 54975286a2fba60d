"""Figure rendering for run reports.

Renders population, density, and balance views of a trajectory to PNG files
next to the delimited output. The CSV remains the primary artifact; these
figures are a convenience rendering of it. File rendering only (Agg
backend), no interactive windows.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import UsageError


def render_figures(times, y, eta, xs, outdir, prefix, ess=None,
                   kappa_curves=None) -> list[Path]:
    """Write the three standard figures and return their paths.

    ``ess`` draws horizontal reference lines at an interior stable state;
    ``kappa_curves`` (samples x communities) overlays carrying capacities
    on the density plot.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []

    fig, ax = plt.subplots(figsize=(6, 3.5))
    for i in range(y.shape[1]):
        ax.plot(times, y[:, i], label=f"y[{i}]")
    if ess is not None:
        for v in np.asarray(ess).ravel():
            ax.axhline(v, color="k", lw=0.8, ls=":")
    ax.set_xlabel("t")
    ax.set_ylabel("population state")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    paths.append(outdir / f"{prefix}_population.png")
    fig.savefig(paths[-1], dpi=150)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 3.5))
    for h in range(eta.shape[1]):
        line, = ax.plot(times, eta[:, h], label=f"eta[{h}]")
        if kappa_curves is not None:
            ax.plot(times, kappa_curves[:, h], ls="--", lw=0.8,
                    color=line.get_color(), alpha=0.6)
    ax.set_xlabel("t")
    ax.set_ylabel("community density")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    paths.append(outdir / f"{prefix}_densities.png")
    fig.savefig(paths[-1], dpi=150)
    plt.close(fig)

    # community mixes x[i,h]/eta_h against the population mix y[i]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = xs / eta[:, None, :]
    for i in range(xs.shape[1]):
        for h in range(xs.shape[2]):
            ax.plot(times, ratios[:, i, h], lw=0.7, alpha=0.7,
                    label=f"x[{i},{h}]/eta[{h}]")
        ax.plot(times, y[:, i], lw=1.8, color="k", alpha=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("community mix vs population mix")
    ax.legend(loc="best", fontsize=7, ncol=2)
    fig.tight_layout()
    paths.append(outdir / f"{prefix}_balance.png")
    fig.savefig(paths[-1], dpi=150)
    plt.close(fig)
    return paths


def load_trajectory_csv(path):
    """Columns of a trajectory CSV grouped as (times, y, eta, xs)."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    if data.dtype.names is None or "t" not in data.dtype.names:
        raise UsageError(f"{path} does not look like a trajectory CSV")
    names = data.dtype.names
    times = np.atleast_1d(data["t"])
    y_cols = [n for n in names if n.startswith("y_")]
    eta_cols = [n for n in names if n.startswith("eta_")]
    x_cols = [n for n in names if n.startswith("x_")]
    y = np.column_stack([np.atleast_1d(data[n]) for n in y_cols])
    eta = np.column_stack([np.atleast_1d(data[n]) for n in eta_cols])
    xs = np.column_stack([np.atleast_1d(data[n]) for n in x_cols])
    xs = xs.reshape(len(times), len(y_cols), len(eta_cols))
    return times, y, eta, xs


def render_csv_figures(csv_path, outdir, prefix=None) -> list[Path]:
    """Render the standard figures from an existing trajectory CSV."""
    times, y, eta, xs = load_trajectory_csv(csv_path)
    if prefix is None:
        prefix = Path(csv_path).stem.removesuffix("_trajectory")
    return render_figures(times, y, eta, xs, outdir, prefix)
