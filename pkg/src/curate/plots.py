"""Render metric curves from a training CSV.

Three figure families are emitted, one file each, with scenarios overlaid:
retrieval accuracy vs. steps, retrieval accuracy vs. cumulative FLOPs, and
the realized joint selection score vs. steps.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .experiments import CSV_COLUMNS

PLOT_FILES = ("eval_vs_steps.png", "eval_vs_flops.png", "score_vs_steps.png")

_FLOAT_FIELDS = (
    "loss",
    "mean_selected_score",
    "eval_i2t_top1",
    "eval_t2i_top1",
    "cumulative_flops",
)


def read_metrics_csv(path: str | Path) -> dict[str, dict[str, list]]:
    """Parse a metrics CSV into per-scenario column lists.

    Raises ValueError naming the offending line for malformed rows.
    """
    by_scenario: dict[str, dict[str, list]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: line 1: empty CSV, expected a header row")
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(
                f"{path}: line 1: unexpected header {header!r}, "
                f"expected {list(CSV_COLUMNS)!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_COLUMNS):
                raise ValueError(
                    f"{path}: line {lineno}: expected {len(CSV_COLUMNS)} fields, "
                    f"got {len(row)}"
                )
            record = dict(zip(CSV_COLUMNS, row))
            try:
                parsed = {
                    "step": int(record["step"]),
                    "skipped": int(record["skipped"]),
                }
                for field in _FLOAT_FIELDS:
                    parsed[field] = float(record[field])
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
            columns = by_scenario.setdefault(
                record["scenario"],
                {key: [] for key in ("step", "skipped", *_FLOAT_FIELDS)},
            )
            for key, value in parsed.items():
                columns[key].append(value)
    return by_scenario


def _overlay(by_scenario, x_key, y_keys, title, x_label, y_label, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for scenario, columns in sorted(by_scenario.items()):
        for y_key, style in zip(y_keys, ("-", "--")):
            label = scenario if len(y_keys) == 1 else f"{scenario} ({y_key})"
            ax.plot(columns[x_key], columns[y_key], style, label=label)
    ax.set_title(title)
    ax.set_xlabel(x_label)
    ax.set_ylabel(y_label)
    if by_scenario:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def emit_plots(metrics_csv: str | Path, output_dir: str | Path) -> list[Path]:
    """Write the three figure files; returns their paths."""
    by_scenario = read_metrics_csv(metrics_csv)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / name for name in PLOT_FILES]
    _overlay(
        by_scenario,
        "step",
        ("eval_i2t_top1", "eval_t2i_top1"),
        "Top-1 retrieval vs. training steps",
        "step",
        "top-1 retrieval",
        paths[0],
    )
    _overlay(
        by_scenario,
        "cumulative_flops",
        ("eval_i2t_top1",),
        "Top-1 retrieval vs. training compute",
        "cumulative FLOPs (forward-pass units)",
        "image-to-text top-1",
        paths[1],
    )
    _overlay(
        by_scenario,
        "step",
        ("mean_selected_score",),
        "Selected joint score vs. training steps",
        "step",
        "joint score of selection",
        paths[2],
    )
    return paths
