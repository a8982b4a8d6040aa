"""Figures written next to the CSV reports (Agg backend, PNG files)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.2),
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-stable
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_curve(points: Sequence[tuple[float, float]], metric: str, path: str | Path, label: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        xs = [p for p, _ in points]
        ys = [v for _, v in points]
        ax.plot(xs, ys, lw=1.4, label=label or None)
        ax.set_xlabel("inference progress")
        ax.set_ylabel(f"smoothed {metric.upper()}")
        ax.set_xlim(0, 1)
        if label:
            ax.legend(frameon=False)
        return _save(fig, path)


def plot_protocols(means: Mapping[str, float], metric: str, path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        names = list(means)
        ax.bar(names, [means[n] for n in names], color="0.55", width=0.6)
        for i, n in enumerate(names):
            ax.annotate(f"{means[n]:.3f}", (i, means[n]), ha="center", va="bottom", fontsize=8)
        ax.set_ylabel(f"mean {metric.upper()}")
        return _save(fig, path)


def plot_stability(per_order: Sequence[float], seeds: Sequence[int], metric: str, path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(range(len(per_order)), per_order, "o", color="k")
        mean = sum(per_order) / len(per_order)
        ax.axhline(mean, color="0.5", ls="--", lw=1)
        ax.set_xticks(range(len(seeds)), [str(s) for s in seeds])
        ax.set_xlabel("shuffle seed")
        ax.set_ylabel(f"mean {metric.upper()}")
        return _save(fig, path)
