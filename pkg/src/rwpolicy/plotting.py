"""Latency-quality figures rendered next to the curve CSV."""

from __future__ import annotations

from collections import defaultdict
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_MARKERS = {"sl": "o", "wait-k": "s", "wiw": "^", "wid": "v"}


def plot_curves(points: Sequence, path, title: str | None = None):
    """BLEU against AL, one line per policy family, points ordered by AL."""
    groups = defaultdict(list)
    for p in points:
        groups[p.label].append(p)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for label, pts in groups.items():
        pts = sorted(pts, key=lambda p: p.al)
        ax.plot([p.al for p in pts], [p.bleu for p in pts],
                marker=_MARKERS.get(label, "x"), label=label)
        for p in pts:
            ax.annotate(p.param, (p.al, p.bleu), textcoords="offset points",
                        xytext=(3, 3), fontsize=7)
    ax.set_xlabel("Average Lagging")
    ax.set_ylabel("BLEU")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    # fixed metadata keeps the bytes reproducible across runs
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
