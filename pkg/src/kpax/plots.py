"""Matplotlib rendering of run outputs, written next to the CSVs.

Figures are a reporting convenience; the CSVs stay the primary interface,
and every plot here is derived from the same arrays that were written out.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "density_figure",
    "projection_figure",
    "convergence_figure",
    "upwind_figure",
]


def density_figure(grid, rho, path, sweep: dict | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(grid, rho, lw=1.0, color="C0", label="density")
    if sweep:
        for b, r in sweep.items():
            ax.plot(grid, r, lw=0.8, alpha=0.7, label=f"b={b:g}")
        ax.legend(fontsize=8)
    ax.set_xlabel(r"$\omega$")
    ax.set_ylabel(r"$\rho_\alpha(\omega)$")
    ax.set_title("mollified spectral density")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def projection_figure(p, coeffs, path, band) -> Path:
    """Heatmap of |projection| per cell; 3-d grids show four x3 layers."""
    title = f"band projection [{band.a:g}, {band.b:g})"
    if p.domain.dim == 2:
        d1, d2 = p.dims
        img = np.abs(coeffs).reshape(d1, d2)
        fig, ax = plt.subplots(figsize=(5, 4.2))
        im = ax.imshow(img.T, origin="lower", aspect="auto")
        fig.colorbar(im, ax=ax)
        ax.set_title(title)
        ax.set_xlabel("i1")
        ax.set_ylabel("i2")
    else:
        d1, d2, d3 = p.dims
        cube = np.abs(coeffs).reshape(d1, d2, d3)
        layers = [int(round(v * d3)) % d3 for v in (0.0, 0.25, 0.5, 0.75)]
        fig, axes = plt.subplots(2, 2, figsize=(8, 7))
        for ax, k, v in zip(axes.ravel(), layers, (0.0, 0.25, 0.5, 0.75)):
            im = ax.imshow(cube[:, :, k].T, origin="lower", aspect="auto")
            ax.set_title(f"x3 = {v:g}", fontsize=9)
            fig.colorbar(im, ax=ax)
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def convergence_figure(levels, hausdorff, ratios, path) -> Path:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.semilogy(levels, hausdorff, "o-")
    ax1.set_xlabel("level")
    ax1.set_ylabel("Hausdorff trace integral")
    ax2.semilogy(levels, ratios, "s-", color="C1")
    ax2.set_xlabel("level")
    ax2.set_ylabel("l / tau")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def upwind_figure(sets, path) -> Path:
    """Analytic (x) vs DFT-numeric (o) eigenvalues in the complex plane."""
    fig, ax = plt.subplots(figsize=(6, 5))
    for i, (g, n, ana, num, _tau) in enumerate(sets):
        color = f"C{i % 10}"
        ax.plot(num.lam.real, num.lam.imag, "o", ms=3, color=color, alpha=0.6,
                label=f"gamma={g:g}, n={n}")
        ax.plot(ana.lam.real, ana.lam.imag, "x", ms=3, color=color, alpha=0.6)
    ax.axvline(0.0, color="k", lw=0.5)
    ax.set_xlabel(r"Re $\lambda$")
    ax.set_ylabel(r"Im $\lambda$")
    ax.set_title("Ulam circulant eigenvalues (o numeric, x analytic)")
    if len(sets) <= 10:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
