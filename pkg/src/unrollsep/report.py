"""Figure rendering for the CLI report path.

Every command that writes a curve or history CSV also renders a matching
PNG next to it (unless plotting is disabled). The CSVs remain the data
interface; figures are purely for inspection.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .evaluate import CurveTable
from .train import EpochStats


def save_curve_figure(table: CurveTable, path: str | Path, title: str = "") -> Path:
    """Cumulative-MSE curves on a log scale, one line per algorithm."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for name, col in table.columns.items():
        ax.semilogy(table.t, col, label=name, linewidth=1.4)
    ax.set_xlabel("iterations / layers t")
    ax.set_ylabel("cumulative average MSE")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_history_figure(history: list[EpochStats], path: str | Path,
                        title: str = "") -> Path:
    """Training loss per epoch, with the test MSE overlaid when recorded."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    epochs = [h.epoch for h in history]
    ax.plot(epochs, [h.train_loss for h in history], label="train loss", linewidth=1.4)
    tested = [(h.epoch, h.test_mse) for h in history if h.test_mse is not None]
    if tested:
        ax.plot(*zip(*tested), "o--", label="test MSE", linewidth=1.2, markersize=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
