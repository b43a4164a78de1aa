"""Report figures rendered next to the CLI's delimited outputs.

Uses matplotlib's object API on an Agg canvas so no global pyplot state
or display is involved; safe to call from library code and threads.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .guidance import LossReport
from .metrics import ConsistencyReport

_STAGE_COLORS = {"stage1": "#3465a4", "stage2": "#cc5500"}


def loss_curve_png(trace: list[tuple[int, LossReport]], path: str | Path) -> None:
    """Plot per-step losses, one panel per training stage."""
    fig = Figure(figsize=(8.0, 4.0), dpi=120)
    FigureCanvasAgg(fig)
    stages = []
    for name in ("stage1", "stage2"):
        rows = [(s, r) for s, r in trace if r.stage == name]
        if rows:
            stages.append((name, rows))
    if not stages:
        stages = [("all", list(trace))]
    for i, (name, rows) in enumerate(stages):
        ax = fig.add_subplot(1, len(stages), i + 1)
        steps = [s for s, _ in rows]
        color = _STAGE_COLORS.get(name, "#555555")
        ax.plot(steps, [r.total for _, r in rows], color=color,
                linewidth=0.9, label="total")
        ax.plot(steps, [r.l1 for _, r in rows], color=color, alpha=0.45,
                linewidth=0.7, label="l1")
        ax.plot(steps, [r.perceptual for _, r in rows], color=color,
                alpha=0.25, linewidth=0.7, label="perceptual")
        ax.set_title(name)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path)


def consistency_png(report: ConsistencyReport, path: str | Path) -> None:
    """Per-pair RMSE bars grouped by interval, flagged pairs hatched."""
    fig = Figure(figsize=(8.0, 4.0), dpi=120)
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(111)
    labels = [f"{p.view_a}→{p.view_b}" for p in report.pairs]
    values = [p.rmse for p in report.pairs]
    colors = ["#888888" if p.flagged else
              ("#3465a4" if p.interval == report.short_interval else "#cc5500")
              for p in report.pairs]
    hatches = ["//" if p.flagged else "" for p in report.pairs]
    bars = ax.bar(np.arange(len(values)), values, color=colors)
    for bar, hatch in zip(bars, hatches):
        bar.set_hatch(hatch)
    ax.set_xticks(np.arange(len(values)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("warped RMSE")
    title = []
    if report.short_mean is not None:
        ax.axhline(report.short_mean, color="#3465a4", linewidth=0.8,
                   linestyle="--")
        title.append(f"interval {report.short_interval}: "
                     f"{report.short_mean:.4f}")
    if report.long_mean is not None and \
            report.long_interval != report.short_interval:
        ax.axhline(report.long_mean, color="#cc5500", linewidth=0.8,
                   linestyle="--")
        title.append(f"interval {report.long_interval}: "
                     f"{report.long_mean:.4f}")
    ax.set_title("; ".join(title) if title else "consistency")
    fig.tight_layout()
    fig.savefig(path)
