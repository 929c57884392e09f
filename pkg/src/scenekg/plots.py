"""Figure rendering for CLI reports; every plot lands next to its data file."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

from .anomaly import SweepCell, TopKReport
from .training import EpochStats


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, dpi=120, bbox_inches="tight", format="png")
    tmp.replace(path)


def save_loss_curve(history: Sequence[EpochStats], path: str | Path) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([e.epoch for e in history], [e.loss for e in history], lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean margin loss")
    ax.set_title("training loss")
    ax.grid(alpha=0.3)
    _save(fig, path)
    plt.close(fig)


def save_sweep_tradeoff(cells: Sequence[SweepCell], path: str | Path) -> None:
    """Accuracy against scene-context weight, one line per (m, k) setting."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    series: dict[tuple[int, int], list[SweepCell]] = {}
    for cell in cells:
        series.setdefault((cell.m, cell.k), []).append(cell)
    for (m, k), group in sorted(series.items()):
        group = sorted(group, key=lambda c: c.alpha)
        # 1 - alpha is the scene-context weight
        ax.plot(
            [1.0 - c.alpha for c in group],
            [c.accuracy for c in group],
            marker="o",
            ms=3,
            label=f"m={m}, top-{k}",
        )
    ax.set_xlabel("scene context weight (1 - alpha)")
    ax.set_ylabel("accuracy")
    ax.set_title("object/scene context trade-off")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    _save(fig, path)
    plt.close(fig)


def save_miss_counts(report: TopKReport, k: int, path: str | Path, limit: int = 10) -> None:
    """Horizontal bar chart of the anomaly labels missed most often at top-k."""
    plt = _plt()
    counts = report.miss_counts.get(k, {})
    top = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:limit]
    fig, ax = plt.subplots(figsize=(6, 4))
    if top:
        labels = [label for label, _ in reversed(top)]
        values = [count for _, count in reversed(top)]
        ax.barh(labels, values)
    else:
        ax.text(0.5, 0.5, "no misses", ha="center", va="center", transform=ax.transAxes)
    ax.set_xlabel(f"missed datapoints at top-{k}")
    ax.set_title("most frequently missed anomalies")
    _save(fig, path)
    plt.close(fig)
