"""Delimited metric reports and the figures rendered next to them.

Every writer here is byte-deterministic: fixed float formatting, sorted
keys, LF endings, and PNG output stripped of the encoder's metadata text
chunks so rerunning a command reproduces the file exactly.
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

# Strip default tEXt chunks (matplotlib writes its version string) so PNG
# bytes depend only on pixel content.
_PNG_META = {"Software": None}


def format_value(v: float) -> str:
    return f"{float(v):.10g}"


def write_metrics_tsv(path: str | Path, metrics: Mapping[str, float],
                      config_hash: str) -> None:
    """Two-column metric/value table, sorted by metric name, with the config
    hash as the first row."""
    lines = [f"config_hash\t{config_hash}"]
    lines += [f"{k}\t{format_value(metrics[k])}" for k in sorted(metrics)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_history_tsv(path: str | Path, columns: Mapping[str, Sequence[float]],
                      config_hash: str) -> None:
    """Per-epoch loss curves, one named column each, header row first."""
    names = sorted(columns)
    if not names:
        raise ValueError("history needs at least one column")
    length = max(len(columns[n]) for n in names)
    lines = [f"# config_hash\t{config_hash}", "\t".join(["epoch"] + names)]
    for i in range(length):
        row = [str(i)]
        for n in names:
            col = columns[n]
            row.append(format_value(col[i]) if i < len(col) else "")
        lines.append("\t".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def render_curves_png(path: str | Path, columns: Mapping[str, Sequence[float]],
                      title: str, ylabel: str = "loss") -> None:
    fig, ax = plt.subplots(figsize=(6, 4), dpi=110)
    for name in sorted(columns):
        ys = list(columns[name])
        ax.plot(range(len(ys)), ys, label=name, linewidth=1.4)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(columns) > 1:
        ax.legend(frameon=False, fontsize=8)
    ax.grid(True, alpha=0.25, linewidth=0.5)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def render_bars_png(path: str | Path, metrics: Mapping[str, float],
                    title: str) -> None:
    names = sorted(metrics)
    vals = [float(metrics[n]) for n in names]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(names)), 4), dpi=110)
    ax.bar(range(len(names)), vals, color="#4878a8")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    for i, v in enumerate(vals):
        ax.annotate(f"{v:.3f}", (i, v), ha="center", va="bottom", fontsize=7)
    ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.25, linewidth=0.5)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
