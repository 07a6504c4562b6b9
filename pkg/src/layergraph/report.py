"""Figures for training runs, written next to the tab-separated history."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def plot_history(history, path, title=None):
    """Loss curve (log scale) with one extra panel per tracked metric."""
    names = sorted({k for r in history for k in r.metrics})
    fig, axes = plt.subplots(1, 1 + len(names), figsize=(5 * (1 + len(names)), 3.5), squeeze=False)
    epochs = [r.epoch for r in history]
    ax = axes[0][0]
    ax.plot(epochs, history.losses, color="C0", lw=1.5)
    if all(v > 0 for v in history.losses):
        ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.grid(True, alpha=0.3)
    for i, name in enumerate(names, 1):
        ax = axes[0][i]
        ax.plot(epochs, [r.metrics[name] for r in history], color=f"C{i}", lw=1.5)
        ax.set_xlabel("epoch")
        ax.set_ylabel(name)
        ax.grid(True, alpha=0.3)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path
