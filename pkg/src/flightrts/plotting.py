"""Static figures rendered next to the CSV grids they are drawn from."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)


def plot_kdes(kdes, path, ncols: int = 4):
    """One panel per component: KDE of standardized residuals against N(0, 1)."""
    names = list(kdes)
    if not names:
        return
    nrows = math.ceil(len(names) / ncols)
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.0 * ncols, 2.2 * nrows), squeeze=False)
    z = np.linspace(-4, 4, 201)
    phi = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    for ax, name in zip(axes.flat, names):
        kd = kdes[name]
        ax.plot(kd.grid, kd.density, lw=1.2, label="KDE")
        ax.plot(z, phi, "k--", lw=0.8, label="N(0,1)")
        ax.set_xlim(-4, 4)
        ax.set_title(name, fontsize=9)
        ax.tick_params(labelsize=7)
    for ax in list(axes.flat)[len(names):]:
        ax.set_visible(False)
    axes.flat[0].legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def plot_contours(cg, x_name: str, y_name: str, path, levels=(0.01, 0.02, 0.05, 0.1, 0.15)):
    """Normalized contour plot with the Gaussian reference dashed."""
    fig, ax = plt.subplots(figsize=(4.2, 4.0))
    X, Y = np.meshgrid(cg.grid, cg.grid)
    ax.contour(X, Y, cg.density, levels=levels, colors="C0", linewidths=1.0)
    ax.contour(X, Y, cg.reference, levels=levels, colors="k", linestyles="--", linewidths=0.8)
    ax.set_aspect("equal")
    ax.set_xlabel(f"{x_name} (normal scores)")
    ax.set_ylabel(f"{y_name} (normal scores)")
    ax.set_title(f"rho = {cg.rho:.3f}", fontsize=9)
    fig.tight_layout()
    _save(fig, path)


def plot_variances(t, variances, names, path, truth=None, ncols: int = 4):
    """Estimated noise variance per component over time, optionally with the truth."""
    variances = np.asarray(variances)
    nrows = math.ceil(len(names) / ncols)
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.0 * ncols, 2.0 * nrows), squeeze=False, sharex=True)
    for i, (ax, name) in enumerate(zip(axes.flat, names)):
        ax.plot(t, variances[:, i], lw=1.0)
        if truth is not None:
            ax.plot(t, np.asarray(truth)[:, i], "k--", lw=0.8)
        ax.set_title(name, fontsize=9)
        ax.tick_params(labelsize=7)
    for ax in list(axes.flat)[len(names):]:
        ax.set_visible(False)
    fig.tight_layout()
    _save(fig, path)
