"""Figure rendering for report outputs.

Curve-producing commands write a PNG next to the delimited output. Figures
carry no timestamp metadata, so renders are byte-reproducible.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_PNG_METADATA = {"Software": None}


def save_line_chart(
    path: str | Path,
    xs,
    series: dict[str, list[float]],
    xlabel: str,
    ylabel: str,
    title: str | None = None,
) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, ys in series.items():
        ax.plot(xs, ys, marker="o", linewidth=1.5, markersize=4, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if len(series) > 1 or any(series):
        ax.legend(fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_METADATA)
    plt.close(fig)


def save_bar_chart(
    path: str | Path,
    labels: list[str],
    values: list[float],
    xlabel: str,
    ylabel: str,
    title: str | None = None,
) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.bar(range(len(labels)), values, color="#4878a8")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_METADATA)
    plt.close(fig)
