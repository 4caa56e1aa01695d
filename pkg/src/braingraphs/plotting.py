"""Report figures: ranking heatmap and outperformance bars."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evalkit import SURROGATE_MARKER  # noqa: E402


def _finish(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_ranking(report, path):
    configs = report["configs"]
    settings = report["settings"]
    ranks = np.array([[report["ranks"][s][c] for c in configs] for s in settings] +
                     [[report["average_rank"][c] for c in configs]])
    fig, ax = plt.subplots(figsize=(max(6, 0.8 * len(configs)), 1.2 + 0.5 * len(ranks)))
    im = ax.imshow(ranks, cmap="viridis_r", aspect="auto")
    ax.set_xticks(range(len(configs)), configs, rotation=45, ha="right")
    ax.set_yticks(range(len(ranks)), settings + ["average"])
    for (i, j), v in np.ndenumerate(ranks):
        r, g, b, _ = im.cmap(im.norm(v))
        dark = 0.299 * r + 0.587 * g + 0.114 * b < 0.5
        ax.text(j, i, f"{v:.1f}", ha="center", va="center", fontsize=8, color="w" if dark else "k")
    fig.colorbar(im, ax=ax, label="rank (lower is better)")
    ax.set_title("Accuracy ranking", fontsize=10)
    fig.text(0.01, 0.01, SURROGATE_MARKER, fontsize=6, alpha=0.7)
    return _finish(fig, path)


def plot_outperformance(report, path):
    items = sorted(report["outperformance"].items(), key=lambda kv: -kv[1])
    fig, ax = plt.subplots(figsize=(max(5, 0.6 * len(items)), 3.5))
    if items:
        names, rates = zip(*items)
        ax.bar(range(len(names)), rates, color="tab:orange")
        ax.set_xticks(range(len(names)), names, rotation=45, ha="right")
    ax.set_ylim(0, 1)
    ax.set_ylabel("outperformance rate")
    ax.set_title(f"vs {report['baseline']} over {len(report['settings'])} setting(s)", fontsize=10)
    fig.text(0.01, 0.01, SURROGATE_MARKER, fontsize=6, alpha=0.7)
    return _finish(fig, path)
