"""Figure rendering for report artifacts.

Every report path that writes delimited output (CSV/JSON) can also render a
figure next to it: salience heatmaps mirroring the per-turn item ranking,
training loss curves, and success-rate comparisons.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import OnlineReport, SalienceMatrix


def save_salience_heatmap(
    matrix: SalienceMatrix, path: str | Path, title: str = "item salience by turn"
) -> Path:
    """Darker cells mark items the model currently finds more recommendable."""
    path = Path(path)
    data = np.array(matrix.rows, dtype=float)
    if data.size == 0:
        data = np.zeros((1, max(1, len(matrix.items))))
    n_rows, n_cols = data.shape
    fig, ax = plt.subplots(
        figsize=(max(4.0, 0.45 * n_cols + 1.5), max(2.5, 0.4 * n_rows + 1.2))
    )
    im = ax.imshow(data, cmap="Blues", vmin=0.0, vmax=1.0, aspect="auto")
    ax.set_xticks(range(len(matrix.items)))
    ax.set_xticklabels(matrix.items, rotation=60, ha="right", fontsize=7)
    ax.set_yticks(range(n_rows))
    ax.set_yticklabels([f"turn {t}" for t in matrix.turn_indices][:n_rows], fontsize=8)
    ax.set_title(title, fontsize=10)
    fig.colorbar(im, ax=ax, shrink=0.8, label="score")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_loss_curve(trace: Sequence[float], path: str | Path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(range(1, len(trace) + 1), trace, marker="o")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_title("training loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_success_bars(
    reports: Mapping[str, OnlineReport], path: str | Path
) -> Path:
    path = Path(path)
    names = list(reports)
    means = [reports[n].mean_success for n in names]
    errs = [reports[n].stderr for n in names]
    fig, ax = plt.subplots(figsize=(1.2 * len(names) + 2, 3.2))
    ax.bar(names, means, yerr=errs, capsize=4, color="#4878cf")
    ax.set_ylabel("success rate")
    ax.set_ylim(0, 1)
    ax.set_title("online evaluation")
    for i, m in enumerate(means):
        ax.text(i, m + 0.02, f"{m:.2f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
