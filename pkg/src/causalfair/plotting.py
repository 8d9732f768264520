"""Grouped bar chart of benchmark effects with bootstrap intervals."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METRIC_LABELS = {"tv": "TV", "nde": "NDE", "nie": "NIE", "exp_se": "Exp-SE"}


def plot_benchmark(rows, path, title: str | None = None) -> None:
    """One panel per cluster; bars are methods, groups are metrics.

    ``rows`` are tidy tuples (method, cluster, metric, point, lo, hi).
    """
    methods = list(dict.fromkeys(r[0] for r in rows))
    clusters = sorted({int(r[1]) for r in rows})
    metrics = [m for m in METRIC_LABELS if any(r[2] == m for r in rows)]
    lookup = {(r[0], int(r[1]), r[2]): r[3:] for r in rows}

    fig, axes = plt.subplots(1, len(clusters), figsize=(5.5 * len(clusters), 4), squeeze=False, sharey=True)
    width = 0.8 / max(1, len(methods))
    pos = np.arange(len(metrics))
    for ax, k in zip(axes[0], clusters):
        for i, method in enumerate(methods):
            vals = [lookup.get((method, k, m), (np.nan,) * 3) for m in metrics]
            point = np.array([v[0] for v in vals], dtype=float)
            err = np.array([[p - v[1] for p, v in zip(point, vals)], [v[2] - p for p, v in zip(point, vals)]])
            label = "balanced (fairlet)" if method == "balanced" else method
            ax.bar(pos + (i - (len(methods) - 1) / 2) * width, point, width, yerr=err, capsize=2, label=label)
        ax.axhline(0, color="black", linewidth=0.6)
        ax.set_xticks(pos, [METRIC_LABELS[m] for m in metrics])
        ax.set_title(f"cluster {k}")
    axes[0][0].set_ylabel("effect on P(cluster)")
    axes[0][-1].legend(fontsize="small")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
