"""Static SVG figures for curves, rank diagrams, test grids and toy weights."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .data import BiqualityDataset
from .density_ratio import WeightVector
from .harness import RunRecord, _records_frame

__all__ = ["plot_curves", "plot_cd_diagram", "plot_wilcoxon_grid", "plot_toy_weights"]

_SYMBOL_STYLE = {
    "win": dict(marker="o", facecolors="none", edgecolors="black", s=60),
    "tie": dict(marker=".", color="black", s=30),
    "loss": dict(marker="o", color="black", s=60),
}


def plot_curves(records: Sequence[RunRecord], p: float, axis: str, path: str | Path,
                fixed_value: Optional[float] = None) -> Path:
    """One kappa-vs-strength polyline per method at a given trusted ratio p."""
    if axis not in ("r", "rho"):
        raise ValueError("axis must be 'r' or 'rho'")
    frame = _records_frame(records).dropna(subset=["kappa"])
    fixed_col = "rho" if axis == "r" else "r"
    if fixed_value is None:
        fixed_value = 1.0 if fixed_col == "rho" else 0.0
    sub = frame[(frame["p"] == p) & (frame[fixed_col] == fixed_value)]
    if sub.empty:
        raise ValueError(f"no records at p={p} with {fixed_col}={fixed_value}")

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for method, rows in sub.groupby("method"):
        curve = rows.groupby(axis)["kappa"].mean().sort_index()
        ax.plot(curve.index, curve.values, marker="o", markersize=3, label=method)
    ax.set_xlabel("noise ratio r" if axis == "r" else "subsampling ratio rho")
    if axis == "rho":
        ax.set_xscale("log")
    ax.set_ylabel("mean Cohen's kappa")
    ax.set_title(f"trusted ratio p = {p}")
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def plot_cd_diagram(methods: Sequence[str], mean_ranks: Sequence[float], cd: float,
                    path: str | Path) -> Path:
    """Critical-difference diagram: methods on a rank axis with the CD bar."""
    if not methods:
        raise ValueError("no methods to plot")
    order = np.argsort(mean_ranks)
    k = len(methods)
    fig, ax = plt.subplots(figsize=(6, 0.6 * k + 1.2))
    ax.set_xlim(0.5, k + 0.5)
    ax.set_ylim(-k - 1, 2.2)
    ax.spines[["left", "right", "bottom"]].set_visible(False)
    ax.xaxis.tick_top()
    ax.set_xticks(np.arange(1, k + 1))
    ax.get_yaxis().set_visible(False)
    ax.plot([1, k], [0, 0], color="black", lw=1)
    for slot, i in enumerate(order):
        y = -(slot + 1)
        ax.plot([mean_ranks[i], mean_ranks[i]], [0, y], color="gray", lw=0.8)
        ax.text(mean_ranks[i], y - 0.15, f" {methods[i]} ({mean_ranks[i]:.2f})",
                va="top", ha="left", fontsize=8)
    ax.plot([1, 1 + cd], [1.2, 1.2], color="black", lw=2)
    ax.text(1 + cd / 2, 1.45, f"CD = {cd:.3f}", ha="center", fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def plot_wilcoxon_grid(cells: Sequence[dict], title: str, path: str | Path) -> Path:
    """Win/tie/loss symbols over the (rho, r) grid for one method pair."""
    if not cells:
        raise ValueError("no grid cells to plot")
    rs = sorted({c["r"] for c in cells})
    rhos = sorted({c["rho"] for c in cells})
    fig, ax = plt.subplots(figsize=(0.5 * len(rhos) + 1.6, 0.5 * len(rs) + 1.6))
    for cell in cells:
        x = rhos.index(cell["rho"])
        y = rs.index(cell["r"])
        ax.scatter([x], [y], **_SYMBOL_STYLE[cell["symbol"]])
    ax.set_xticks(range(len(rhos)), [f"{v:g}" for v in rhos])
    ax.set_yticks(range(len(rs)), [f"{v:g}" for v in rs])
    ax.set_xlabel("rho")
    ax.set_ylabel("r")
    ax.set_title(title, fontsize=9)
    ax.set_xlim(-0.5, len(rhos) - 0.5)
    ax.set_ylim(-0.5, len(rs) - 0.5)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def plot_toy_weights(biq: BiqualityDataset, weights: WeightVector, path: str | Path,
                     max_area: float = 120.0) -> Path:
    """Two-feature scatter: trusted squares, untrusted circles with area ~ weight."""
    if biq.trusted.n_features != 2:
        raise ValueError("toy-weights plots need exactly 2 features")
    if len(weights) != biq.untrusted.n_samples:
        raise ValueError("weights must align with the untrusted rows")
    values = weights.values
    scale = max_area / max(values.max(), 1e-12)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    cmap = plt.get_cmap("viridis")
    for k in range(biq.n_classes):
        color = cmap(k / max(biq.n_classes - 1, 1))
        u_rows = biq.untrusted.labels == k
        ax.scatter(
            biq.untrusted.features[u_rows, 0], biq.untrusted.features[u_rows, 1],
            s=np.maximum(values[u_rows] * scale, 1.0), marker="o", alpha=0.35,
            color=color, linewidths=0,
        )
        t_rows = biq.trusted.labels == k
        ax.scatter(
            biq.trusted.features[t_rows, 0], biq.trusted.features[t_rows, 1],
            s=30, marker="s", color=color, edgecolors="black", linewidths=0.5,
        )
    ax.set_xlabel(biq.trusted.feature_names[0])
    ax.set_ylabel(biq.trusted.feature_names[1])
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
