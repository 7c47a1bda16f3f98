"""Matplotlib figure rendering for the CLI report paths.

Each benchmark-style command writes a PNG next to its CSV; the CSV remains
the machine-readable boundary.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_benchmark_figure", "render_sweep_figure", "render_ablation_figure"]


def render_benchmark_figure(rows, threshold: float, path) -> None:
    """Histogram of anomaly scores, benign vs poisoned, with the decision line."""
    benign = [r.score for r in rows if r.label == "benign"]
    poisoned = [r.score for r in rows if r.label == "poisoned"]
    fig, ax = plt.subplots(figsize=(7, 4))
    hi = max([threshold * 2] + benign + poisoned)
    bins = np.linspace(0, hi * 1.05 + 1, 40)
    if benign:
        ax.hist(benign, bins=bins, alpha=0.6, label=f"benign (n={len(benign)})", color="tab:blue")
    if poisoned:
        ax.hist(poisoned, bins=bins, alpha=0.6, label=f"poisoned (n={len(poisoned)})", color="tab:red")
    ax.axvline(threshold, color="k", linestyle="--", label=f"threshold = {threshold:g}")
    ax.set_xlabel("anomaly score")
    ax.set_ylabel("scenarios")
    ax.set_title("Residual-cluster anomaly scores")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_sweep_figure(rows, path) -> None:
    """Operating points in FPR/TPR space, one line per count threshold."""
    fig, ax = plt.subplots(figsize=(6, 5))
    by_min_pts: dict[int, list] = {}
    for r in rows:
        by_min_pts.setdefault(r.min_pts, []).append(r)
    for min_pts, group in sorted(by_min_pts.items()):
        group = sorted(group, key=lambda r: r.eps)
        ax.plot([g.fpr for g in group], [g.tpr for g in group], "o-", label=f"min_pts={min_pts}")
        for g in group:
            ax.annotate(f"{g.eps:g}", (g.fpr, g.tpr), fontsize=7,
                        textcoords="offset points", xytext=(4, 2))
    ax.plot([0], [1], "rs", markersize=10, label="ideal")
    ax.set_xlabel("FPR")
    ax.set_ylabel("TPR")
    ax.set_xlim(-0.05, 1.05)
    ax.set_ylim(-0.05, 1.05)
    ax.set_title("Clustering threshold sweep")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_ablation_figure(rows, path) -> None:
    """Detection rates and flow variance with/without the coherence term."""
    betas = [r[0] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    x = np.arange(len(betas))
    width = 0.35
    ax1.bar(x - width / 2, [r[1] for r in rows], width, label="FPR", color="tab:orange")
    ax1.bar(x + width / 2, [r[2] for r in rows], width, label="TPR", color="tab:green")
    ax1.set_xticks(x, [f"beta={b:g}" for b in betas])
    ax1.set_ylim(0, 1.05)
    ax1.set_title("Detection rates")
    ax1.legend()
    ax2.bar(x, [r[3] for r in rows], 0.5, color="tab:purple")
    ax2.set_xticks(x, [f"beta={b:g}" for b in betas])
    ax2.set_title("Mean within-cluster flow variance\n(poisoned scenarios)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
