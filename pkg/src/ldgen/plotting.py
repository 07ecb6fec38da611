"""Report figures written to files (Agg backend, no display needed)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIGSIZE = (6.0, 3.7)


def _style(ax):
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    ax.grid(alpha=0.3, linewidth=0.5)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_training_curves(metrics, path, title: str = "training") -> Path:
    """Loss components against step; mean cosine on a twin axis when present."""
    steps = [m.step for m in metrics]
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(steps, [m.total for m in metrics], label="total", color="k")
    for name, color in (("cosine", "tab:blue"), ("mse", "tab:orange")):
        vals = [getattr(m, name) for m in metrics]
        if all(v is not None for v in vals) and vals:
            ax.plot(steps, vals, label=name, color=color, linewidth=1)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    _style(ax)
    cos = [m.mean_cosine for m in metrics]
    if cos and all(c is not None for c in cos):
        ax2 = ax.twinx()
        ax2.plot(steps, cos, color="tab:green", linestyle="--", label="mean cosine")
        ax2.set_ylabel("mean cosine")
        ax2.set_ylim(min(0.0, min(cos)), 1.0)
        ax2.legend(loc="center right", frameon=False)
    ax.legend(loc="upper right", frameon=False)
    ax.set_title(title)
    return _save(fig, path)


def plot_cosine_histogram(cosines: Sequence[float], path, bins: int = 40) -> Path:
    c = np.asarray(cosines, dtype=np.float64)
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.hist(c, bins=bins, color="tab:blue", alpha=0.8)
    ax.axvline(c.mean(), color="k", linestyle="--", linewidth=1, label=f"mean {c.mean():.4f}")
    ax.set_xlabel("per-sample masked cosine")
    ax.set_ylabel("count")
    ax.legend(frameon=False)
    _style(ax)
    return _save(fig, path)


def plot_level_frequencies(counts: Sequence[int], path) -> Path:
    """Bar chart of sampled caption levels with the uniform expectation marked."""
    counts = np.asarray(counts)
    freq = counts / counts.sum()
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.bar(np.arange(len(counts)), freq, color="tab:gray")
    ax.axhline(1 / len(counts), color="tab:red", linestyle="--", linewidth=1, label="uniform")
    ax.set_xticks(np.arange(len(counts)))
    ax.set_xlabel("caption level")
    ax.set_ylabel("frequency")
    ax.legend(frameon=False)
    _style(ax)
    return _save(fig, path)


def plot_template_scores(reports, path) -> Path:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for rep in reports:
        ax.plot(np.arange(len(rep.level_scores)), rep.level_scores, marker="o", label=rep.template_id)
    ax.set_xlabel("caption level")
    ax.set_ylabel("proxy score")
    ax.set_ylim(0, 1.05)
    ax.legend(frameon=False, fontsize=8, ncol=2)
    _style(ax)
    return _save(fig, path)
