"""Delimited output and figure rendering.

All CSVs use a pinned column order and plain ``repr`` float formatting, so a
rerun with the same config and seed reproduces the files byte for byte.
Figures are rendered straight to image files next to the CSVs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .coteach import RoundLog
from .pipeline import VARIANTS, ExperimentResult

METRIC_COLUMNS = ["variant", "map", "rank1", "rank5", "rank10", "fscore", "excluded", "n", "seed", "config_hash"]
ROUND_COLUMNS = ["paradigm", "round", "active_model", "selected_count", "mean_loss", "teacher_val_map", "ema_teacher_val_map"]
SWEEP_COLUMNS = ["n", "seed", "map", "avg_fscore", "config_hash"]


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float) and np.isnan(value):
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


class CsvSink:
    """Streams rows to disk, flushing each one so partial runs keep output."""

    def __init__(self, path, columns):
        self.columns = columns
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(columns)
        self._fh.flush()

    def write(self, row: dict) -> None:
        self._writer.writerow([_cell(row.get(c)) for c in self.columns])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_rows(path, columns, rows) -> None:
    with CsvSink(path, columns) as sink:
        for row in rows:
            sink.write(row)


def write_round_log(path, log: list[RoundLog]) -> None:
    write_rows(path, ROUND_COLUMNS, (asdict(row) for row in log))


def write_result_json(path, result: ExperimentResult) -> None:
    payload = {
        "seed": result.seed,
        "config_hash": result.config_hash,
        "config": result.config.to_dict(),
        "tier_sizes": result.tier_sizes,
        "avg_fscore": result.avg_fscore,
        "variants": {
            name: {
                "map": report.map,
                "rank1": report.rank(1),
                "rank5": report.rank(5),
                "rank10": report.rank(10),
                "fscore": report.fscore,
                "excluded": report.excluded,
            }
            for name, report in result.variants.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def save_ablation_figure(medians: dict[str, float], path) -> None:
    """Bar chart of per-variant mAP (medians when several seeds ran)."""
    names = [v for v in VARIANTS if v in medians]
    values = [100.0 * medians[v] for v in names]
    fig, ax = plt.subplots(figsize=(6, 4))
    bars = ax.bar(names, values, color="#4878a8")
    ax.bar_label(bars, fmt="%.1f")
    ax.set_ylabel("mAP (%)")
    ax.set_ylim(0, 100)
    ax.set_title("Target-domain retrieval by pipeline stage")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_rounds_figure(log: list[RoundLog], path) -> None:
    """Teacher validation mAP over co-teaching rounds, per paradigm."""
    fig, ax = plt.subplots(figsize=(7, 4))
    paradigms = sorted({row.paradigm for row in log}, reverse=True)
    offset = 0
    for paradigm in paradigms:
        rows = [r for r in log if r.paradigm == paradigm]
        xs = [offset + i + 1 for i in range(len(rows))]
        ax.plot(xs, [100.0 * r.teacher_val_map for r in rows], label=f"paradigm {paradigm} (live)")
        ax.plot(
            xs,
            [100.0 * r.ema_teacher_val_map for r in rows],
            linestyle="--",
            label=f"paradigm {paradigm} (avg)",
        )
        offset = xs[-1]
    ax.set_xlabel("round")
    ax.set_ylabel("validation mAP (%)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_sweep_figure(rows: list[dict], path) -> None:
    """Median mAP and average pseudo-label F-score against tier count."""
    ns = sorted({row["n"] for row in rows})
    med_map = [100.0 * float(np.median([r["map"] for r in rows if r["n"] == n])) for n in ns]
    med_f = [float(np.median([r["avg_fscore"] for r in rows if r["n"] == n])) for n in ns]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ns, med_map, marker="o", color="#4878a8", label="mAP")
    ax.set_xlabel("tier count n")
    ax.set_ylabel("mAP (%)", color="#4878a8")
    ax.set_xticks(ns)
    twin = ax.twinx()
    twin.plot(ns, med_f, marker="s", linestyle="--", color="#508050", label="avg F-score")
    twin.set_ylabel("average pseudo-label F-score", color="#508050")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
