"""Report figures: per-gate style histograms and the gate-sweep curve.

Rendering goes through matplotlib's object API with the Agg canvas, so no
global pyplot state is touched and no display is needed. Output files carry
no timestamps or version strings; identical inputs yield identical bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from matplotlib.figure import Figure

FIGURE_DPI = 100
HIST_METRICS = ("ngram_overlap", "specificity")
_UNIT_BINS = np.linspace(0.0, 1.0, 21)
_PNG_METADATA = {"Software": None}  # drop the library version text chunk


def gate_position(label: str) -> float | None:
    """Sweep x-coordinate of a gate label, or None when it has no position.

    Manual gates map to the weight on the last decoder (for two decoders,
    the sweep value g itself); single:j maps to the decoder index. Learned
    and cross-model labels carry no position.
    """
    if label.startswith("manual:"):
        try:
            return float(label.split(":", 1)[1].split(",")[-1])
        except ValueError:
            return None
    if label.startswith("single:"):
        try:
            return float(label.split(":", 1)[1])
        except ValueError:
            return None
    return None


def _save(fig: Figure, path) -> None:
    fig.savefig(path, dpi=FIGURE_DPI, format="png", metadata=_PNG_METADATA)


def style_histogram(values_by_label: Mapping[str, Sequence[float]],
                    metric: str, path) -> None:
    """Overlaid per-gate histograms of one unit-interval style metric."""
    fig = Figure(figsize=(6.4, 4.0))
    ax = fig.subplots()
    for label in sorted(values_by_label):
        ax.hist(np.clip(values_by_label[label], 0.0, 1.0), bins=_UNIT_BINS,
                alpha=0.55, label=label)
    ax.set_xlabel(metric)
    ax.set_ylabel("summaries")
    ax.set_title(f"{metric} by gate")
    ax.legend(fontsize="small")
    _save(fig, path)


def sweep_curve(series: Mapping[str, Sequence[tuple[float, float]]], path) -> None:
    """Mean metric value against gate position, one line per metric."""
    fig = Figure(figsize=(6.4, 4.0))
    ax = fig.subplots()
    for metric in sorted(series):
        points = sorted(series[metric])
        ax.plot([p[0] for p in points], [p[1] for p in points],
                marker="o", label=metric)
    ax.set_xlabel("gate weight on decoder 1")
    ax.set_ylabel("mean value")
    ax.set_title("style against gate weight")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(fontsize="small")
    _save(fig, path)


def render_report_figures(values: Mapping[str, Mapping[str, Sequence[float]]],
                          out_stem) -> list[Path]:
    """Write the report's PNG set next to the delimited output.

    values maps gate label -> metric name -> per-summary values. One
    histogram is written per unit-interval metric; the sweep curve appears
    only when at least two labels carry a gate position.
    """
    stem = Path(out_stem)
    written: list[Path] = []
    for metric in HIST_METRICS:
        per_label = {label: metrics[metric]
                     for label, metrics in values.items()
                     if metrics.get(metric)}
        if not per_label:
            continue
        path = stem.with_name(f"{stem.name}_hist_{metric}.png")
        style_histogram(per_label, metric, path)
        written.append(path)

    positioned = {label: gate_position(label) for label in values}
    if sum(pos is not None for pos in positioned.values()) >= 2:
        series: dict[str, list[tuple[float, float]]] = {}
        for metric in HIST_METRICS:
            points = []
            for label, pos in positioned.items():
                vals = values[label].get(metric)
                if pos is None or not vals:
                    continue
                points.append((pos, float(np.mean(vals))))
            if len(points) >= 2:
                series[metric] = points
        if series:
            path = stem.with_name(f"{stem.name}_sweep.png")
            sweep_curve(series, path)
            written.append(path)
    return written
