"""Analysis figures rendered from a saved score report.

Plotting is strictly downstream of the report data (the same cells the csv
and json formats carry): a grouped bar chart comparing the modality-shared
and modality-specific splits, and a line chart over the entity-count
buckets. Files are written as PNG next to the delimited output.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .scoring import METRIC_HEADERS, ReportCell, ScoreReport


def _series_label(cell: ReportCell) -> str:
    return f"{cell.dataset} {METRIC_HEADERS.get(cell.metric, cell.metric)}"


def plot_alignment_gap(report: ScoreReport, path: str) -> bool:
    """Bar chart of shared vs specific per (dataset, metric); skipped when the
    report carries no such splits."""
    shared = {}
    specific = {}
    for c in report.cells:
        if c.split == "shared":
            shared[_series_label(c)] = c.value * 100
        elif c.split == "specific":
            specific[_series_label(c)] = c.value * 100
    labels = sorted(set(shared) | set(specific))
    if not labels:
        return False
    x = range(len(labels))
    width = 0.38
    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(labels)), 4))
    ax.bar([i - width / 2 for i in x], [shared.get(l, 0.0) for l in labels], width, label="shared")
    ax.bar([i + width / 2 for i in x], [specific.get(l, 0.0) for l in labels], width, label="specific")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("score (%)")
    ax.set_title("Modality-shared vs modality-specific")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True


def plot_entity_buckets(report: ScoreReport, path: str) -> bool:
    """Score vs gold tuple-count bucket, one line per (dataset, metric)."""
    series: dict[str, dict[str, float]] = {}
    buckets: set[str] = set()
    for c in report.cells:
        if not c.split.startswith("n=") and not c.split.startswith("n>="):
            continue
        series.setdefault(_series_label(c), {})[c.split] = c.value * 100
        buckets.add(c.split)
    if not buckets:
        return False

    def bucket_key(b: str):
        return (1, b) if b.startswith("n>=") else (0, f"{int(b[2:]):09d}")

    ordered = sorted(buckets, key=bucket_key)
    fig, ax = plt.subplots(figsize=(6.5, 4))
    for label in sorted(series):
        points = series[label]
        ax.plot(ordered, [points.get(b, float("nan")) for b in ordered], marker="o", label=label)
    ax.set_xlabel("gold entities/objects per instance")
    ax.set_ylabel("score (%)")
    ax.set_title("Impact of entity/object count")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True


def render_figures(report: ScoreReport, out_dir: str) -> list[str]:
    """Write every figure the report's splits support; returns written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    alignment_path = os.path.join(out_dir, "alignment_gap.png")
    if plot_alignment_gap(report, alignment_path):
        written.append(alignment_path)
    buckets_path = os.path.join(out_dir, "entity_buckets.png")
    if plot_entity_buckets(report, buckets_path):
        written.append(buckets_path)
    return written
