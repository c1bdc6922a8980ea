"""Report figures, rendered to SVG deterministically.

Matplotlib salts SVG ids per process and stamps a creation date; both
are pinned here so rerunning a command reproduces the figure byte for
byte alongside the delimited output.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .report import atomic_write_bytes

_HASHSALT = "confopt"


def save_figure(fig, path: str | Path, *, config_hash: str, seed: int) -> Path:
    """Render to SVG with pinned ids and metadata, then close the figure."""
    import io

    with plt.rc_context({"svg.hashsalt": _HASHSALT}):
        buf = io.BytesIO()
        fig.savefig(
            buf,
            format="svg",
            metadata={"Date": None, "Title": f"config_hash={config_hash} seed={seed}"},
        )
    plt.close(fig)
    return atomic_write_bytes(path, buf.getvalue())


def volume_curve_figure(k_grid, volumes, ses, k_star: int):
    k_grid = np.asarray(k_grid)
    volumes = np.asarray(volumes, dtype=float)
    ses = np.asarray(ses, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.errorbar(k_grid, volumes, yerr=ses, marker="o", markersize=4, capsize=3, lw=1.2)
    ax.axvline(k_star, color="crimson", lw=1.0, ls="--", label=f"selected K = {k_star}")
    ax.set_xlabel("draws per context K")
    ax.set_ylabel("mean region volume")
    ax.set_xticks(k_grid)
    ax.legend(frameon=False)
    fig.tight_layout()
    return fig


def method_bar_figure(labels, values, ylabel: str, errors=None, target: float | None = None):
    values = np.asarray(values, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.4))
    pos = np.arange(len(labels))
    ax.bar(pos, values, yerr=errors, width=0.65, color="#4878a8", capsize=3)
    if target is not None:
        ax.axhline(target, color="crimson", lw=1.0, ls="--", label=f"target {target:g}")
        ax.legend(frameon=False)
    ax.set_xticks(pos)
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    return fig


def rp_scatter_figure(sample_points, rps, cells):
    """Region sample colored by owning representative point (2-D only)."""
    pts = np.asarray(sample_points, dtype=float)
    rps = np.asarray(rps, dtype=float)
    if pts.shape[1] != 2:
        raise ValueError("scatter rendering needs a 2-D outcome space")
    fig, ax = plt.subplots(figsize=(4.6, 4.2))
    cmap = plt.get_cmap("tab10")
    for j in range(len(rps)):
        mask = np.asarray(cells) == j
        ax.scatter(pts[mask, 0], pts[mask, 1], s=5, alpha=0.4, color=cmap(j % 10), rasterized=False)
    ax.scatter(rps[:, 0], rps[:, 1], marker="*", s=160, color="black", zorder=5, label="representative points")
    ax.set_xlabel("$c_1$")
    ax.set_ylabel("$c_2$")
    ax.set_aspect("equal")
    ax.legend(frameon=False, loc="best")
    fig.tight_layout()
    return fig


def variance_bar_figure(projection_variances, axis_labels=None):
    """Grouped per-axis spread bars, one group per representative point."""
    var = np.asarray(projection_variances, dtype=float)
    n_rp, dim = var.shape
    fig, ax = plt.subplots(figsize=(max(5.0, 0.5 * n_rp * min(dim, 20)), 3.4))
    if dim > 20:
        # Too many axes to read individually; show total spread per RP.
        ax.bar(np.arange(n_rp), var.sum(axis=1), width=0.65, color="#4878a8")
        ax.set_xticks(np.arange(n_rp))
        ax.set_xticklabels([f"RP {i}" for i in range(n_rp)])
        ax.set_ylabel("total projection variance")
    else:
        width = 0.8 / dim
        cmap = plt.get_cmap("tab10")
        for j in range(dim):
            label = axis_labels[j] if axis_labels is not None else f"axis {j}"
            ax.bar(np.arange(n_rp) + (j - (dim - 1) / 2) * width, var[:, j], width=width,
                   color=cmap(j % 10), label=label)
        ax.set_xticks(np.arange(n_rp))
        ax.set_xticklabels([f"RP {i}" for i in range(n_rp)])
        ax.set_ylabel("projection variance")
        if dim <= 10:
            ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return fig
