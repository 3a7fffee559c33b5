"""Tab-delimited summaries and matplotlib figures for datasets and deployments."""

from __future__ import annotations

import sys
from typing import Iterable, Optional, Sequence, TextIO

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from skillgen.demos import DatasetStats, Demonstration, segment_lengths  # noqa: E402


def write_rows(rows: Iterable[tuple], out: Optional[TextIO] = None) -> None:
    """One `key<TAB>value` line per row; floats with 4 decimals."""
    out = sys.stdout if out is None else out
    for key, value in rows:
        if isinstance(value, float):
            value = f"{value:.4f}"
        elif isinstance(value, bool):
            value = str(value).lower()
        out.write(f"{key}\t{value}\n")


def _length_summary(prefix: str, lengths: Sequence[int]) -> list:
    if not lengths:
        return [(f"{prefix}.count", 0), (f"{prefix}.mean", 0.0), (f"{prefix}.min", 0),
                (f"{prefix}.max", 0)]
    a = np.asarray(lengths)
    return [(f"{prefix}.count", int(a.size)), (f"{prefix}.mean", float(a.mean())),
            (f"{prefix}.min", int(a.min())), (f"{prefix}.max", int(a.max()))]


def dataset_rows(demos: Sequence[Demonstration], stats: DatasetStats) -> list:
    rows = [("demos", len(demos))] + list(stats.summary().items())
    lengths = segment_lengths(demos)
    for kind in ("motion", "skill"):
        rows += _length_summary(f"{kind}_steps", lengths.get(kind, []))
    rows += _length_summary("episode_steps", [len(d.flat_steps()) for d in demos])
    return rows


def deploy_rows(report) -> list:
    rows = [("episodes", len(report.episodes)), ("successes", report.successes),
            ("success_rate", float(report.success_rate))]
    counts = report.failure_counts()
    for cause in ("ik_unreachable", "plan_failure", "execution_failure", "skill_timeout",
                  "task_failure"):
        rows.append((f"failures.{cause}", counts.get(cause, 0)))
    return rows


def plot_segment_lengths(demos: Sequence[Demonstration], path) -> None:
    """Histograms of motion and skill segment lengths (ticks)."""
    lengths = segment_lengths(demos)
    fig, axes = plt.subplots(1, 2, figsize=(8, 3), constrained_layout=True)
    for ax, kind in zip(axes, ("motion", "skill")):
        data = lengths.get(kind, [])
        if data:
            ax.hist(data, bins=min(30, max(1, len(set(data)))), color="0.4")
        ax.set_title(f"{kind} segments")
        ax.set_xlabel("steps")
        ax.set_ylabel("count")
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_deploy(report, path) -> None:
    """Bar chart of episode outcomes."""
    counts = {"success": report.successes, **report.failure_counts()}
    fig, ax = plt.subplots(figsize=(5, 3), constrained_layout=True)
    names = list(counts)
    ax.bar(range(len(names)), [counts[n] for n in names], color="0.4")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel("episodes")
    ax.set_title(f"success rate {report.success_rate:.2f} ({len(report.episodes)} episodes)")
    fig.savefig(path, dpi=100)
    plt.close(fig)
