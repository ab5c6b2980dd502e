"""Figures for sweep and report output.

Rendering is forced onto the Agg backend and SVG output is made reproducible
(fixed hash salt, no date metadata) so reruns produce identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Patch  # noqa: E402

_STYLE = {
    "svg.hashsalt": "idkreward",
    "svg.fonttype": "none",
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
}

_COLORS = {"correct": "#2a9d8f", "incorrect": "#e76f51", "idk": "#264653"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = path.suffix.lstrip(".").lower() or "svg"
    metadata = {"Date": None} if fmt == "svg" else None
    fig.savefig(path, format=fmt, metadata=metadata, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_sweep(rows: Sequence[tuple[float, float, float, float]], path, title: str | None = None) -> Path:
    """Line chart of correct/incorrect/IDK percentages against r_abs.

    ``rows`` holds ``(r_abs, correct_pct, incorrect_pct, idk_pct)`` tuples.
    """
    rows = sorted(rows)
    xs = [r[0] for r in rows]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        for col, name in enumerate(("correct", "incorrect", "idk"), start=1):
            ax.plot(xs, [r[col] for r in rows], marker="o", color=_COLORS[name], label=name)
        ax.set_xlabel("abstention reward r_abs")
        ax.set_ylabel("share of responses (%)")
        ax.set_ylim(-2, 102)
        if title:
            ax.set_title(title)
        ax.legend(loc="best")
        return _save(fig, path)


def plot_metrics(
    labels: Sequence[str],
    metrics: Sequence[tuple[float | None, float | None, float | None]],
    path,
    title: str | None = None,
) -> Path:
    """Grouped bars of accuracy / adjusted accuracy / abstention recall per row.

    Not-applicable metrics (None) are drawn as an "n/a" marker instead of a bar.
    """
    names = ("accuracy", "adjusted accuracy", "abstention recall")
    colors = ("#2a9d8f", "#e9c46a", "#264653")
    width = 0.26
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 1.3 * len(labels) + 1.5), 3.2))
        for j, (name, color) in enumerate(zip(names, colors)):
            xs = [i + (j - 1) * width for i, m in enumerate(metrics) if m[j] is not None]
            ys = [m[j] for m in metrics if m[j] is not None]
            ax.bar(xs, ys, width=width, color=color)
            for i, m in enumerate(metrics):
                if m[j] is None:
                    ax.text(i + (j - 1) * width, 0.02, "n/a", ha="center", va="bottom",
                            rotation=90, fontsize=8, color="#555555")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=20, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("score")
        if title:
            ax.set_title(title)
        handles = [Patch(color=c, label=n) for n, c in zip(names, colors)]
        ax.legend(handles=handles, loc="upper left", bbox_to_anchor=(1.0, 1.0))
        return _save(fig, path)
