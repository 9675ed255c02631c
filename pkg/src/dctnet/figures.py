"""Figure rendering for reports: cost comparisons and training curves.

Everything renders through the Agg backend straight to files, so the
functions work in headless environments and never open a window.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["render_cost_figure", "render_training_curves"]


def render_cost_figure(reports, path) -> Path:
    """Side-by-side parameter and MAC totals, one bar per model."""
    names = [r.name for r in reports]
    params = [r.total_params / 1e6 for r in reports]
    macs = [r.total_macs / 1e9 for r in reports]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(max(7, 1.6 * len(names)), 3.6))
    for ax, values, label in ((ax1, params, "parameters (millions)"), (ax2, macs, "MACs (billions)")):
        ax.bar(range(len(names)), values, color="#4878d0")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
        ax.set_ylabel(label)
        ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_training_curves(records, path) -> Path:
    """Loss and accuracy against epoch, from training log records."""
    epochs = [r["epoch"] for r in records]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.plot(epochs, [r["train_loss"] for r in records], marker="o", ms=3)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("training loss")
    ax1.grid(alpha=0.3)
    ax2.plot(epochs, [100 * r["train_acc"] for r in records], marker="o", ms=3, label="train")
    ax2.plot(epochs, [100 * r["test_acc"] for r in records], marker="s", ms=3, label="test")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("accuracy (%)")
    ax2.legend()
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
