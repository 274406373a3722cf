"""Report figures written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

EARLY = "tab:blue"
LATE = "tab:orange"
ON_TIME = "tab:gray"


def _finish(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_offset_distribution(offsets_s, path, title="Boundary to end-of-turn offset"):
    """Histogram and empirical CDF of non-zero offsets in seconds."""
    vals = np.sort(np.asarray([o for o in offsets_s if o > 0], dtype=float))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    if vals.size:
        ax1.hist(vals, bins=min(30, max(5, len(np.unique(vals)))), color=EARLY, edgecolor="white")
        ax2.step(vals, np.arange(1, vals.size + 1) / vals.size, where="post", color=EARLY)
        ax2.axvline(10.0, ls="--", lw=0.8, color="k")
    ax1.set_xlabel("offset (s)")
    ax1.set_ylabel("transcripts")
    ax2.set_xlabel("offset (s)")
    ax2.set_ylabel("cumulative fraction")
    ax2.set_ylim(0, 1.02)
    fig.suptitle(title, fontsize=10)
    return _finish(fig, path)


def plot_turn_difference(histogram: dict[int, int], path, title="Predicted minus true turn"):
    """Bar chart of turn differences; early predictions blue, late orange."""
    fig, ax = plt.subplots(figsize=(5, 3.4))
    keys = sorted(histogram)
    colors = [EARLY if k < 0 else LATE if k > 0 else ON_TIME for k in keys]
    ax.bar(keys, [histogram[k] for k in keys], color=colors, width=0.8)
    ax.set_xlabel("turn difference (#turns)")
    ax.set_ylabel("conversations")
    ax.set_title(title, fontsize=10)
    if keys:
        ax.set_xticks(range(min(keys), max(keys) + 1))
    return _finish(fig, path)


def plot_training_curve(rows, path, metric="loss"):
    epochs = [r[0] for r in rows if r[1] == "train" and r[2] == metric]
    vals = [r[3] for r in rows if r[1] == "train" and r[2] == metric]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(epochs, vals, marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel(f"train {metric}")
    return _finish(fig, path)
