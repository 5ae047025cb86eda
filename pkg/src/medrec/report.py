"""Ablation tables and figures.

Runs are metrics JSON files produced by `medrec train`/`medrec eval`; the
report groups them by variant, prints a fixed-order aligned table (one row
per variant, four metric columns, mean with std when several seeds ran),
writes the same data as CSV, and renders bar charts per metric.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .model import VARIANTS

METRIC_COLUMNS = ("ddi_rate", "jaccard", "prauc", "f1")
METRIC_LABELS = {"ddi_rate": "DDI Rate", "jaccard": "Jaccard",
                 "prauc": "PRAUC", "f1": "F1"}


@dataclass(frozen=True)
class RunRecord:
    variant: str
    seed: int
    metrics: dict


def load_run(path) -> RunRecord:
    with open(path) as fh:
        data = json.load(fh)
    missing = [k for k in METRIC_COLUMNS if k not in data]
    if missing:
        raise ValueError(f"{path}: metrics file missing {missing}")
    config = data.get("config", {})
    train_cfg = config.get("train", {})
    return RunRecord(
        variant=str(data.get("variant", train_cfg.get("variant", "unknown"))),
        seed=int(data.get("seed", train_cfg.get("seed", 0))),
        metrics={k: float(data[k]) for k in METRIC_COLUMNS},
    )


def collect_runs(run_dirs) -> list[RunRecord]:
    """Each run directory contributes every *metrics.json inside it."""
    runs: list[RunRecord] = []
    for d in run_dirs:
        d = Path(d)
        if d.is_file():
            runs.append(load_run(d))
            continue
        for path in sorted(d.glob("**/*metrics.json")):
            runs.append(load_run(path))
    return runs


@dataclass
class VariantRow:
    variant: str
    n_seeds: int
    mean: dict
    std: dict  # empty when a single run

    def cell(self, metric: str) -> str:
        if self.std:
            return f"{self.mean[metric]:.4f}±{self.std[metric]:.4f}"
        return f"{self.mean[metric]:.4f}"


def summarize(runs: list[RunRecord]) -> list[VariantRow]:
    if len(runs) < 2:
        raise ValueError(f"need >= 2 completed runs, got {len(runs)}")
    order = {v: i for i, v in enumerate(VARIANTS)}
    by_variant: dict[str, list[RunRecord]] = {}
    for run in runs:
        by_variant.setdefault(run.variant, []).append(run)
    rows = []
    for variant in sorted(by_variant, key=lambda v: (order.get(v, len(order)), v)):
        group = by_variant[variant]
        values = {m: np.array([r.metrics[m] for r in group]) for m in METRIC_COLUMNS}
        rows.append(VariantRow(
            variant=variant,
            n_seeds=len(group),
            mean={m: float(values[m].mean()) for m in METRIC_COLUMNS},
            std={m: float(values[m].std(ddof=1)) for m in METRIC_COLUMNS}
                if len(group) > 1 else {},
        ))
    return rows


def format_table(rows: list[VariantRow]) -> str:
    headers = ["variant", "seeds"] + [METRIC_LABELS[m] for m in METRIC_COLUMNS]
    grid = [headers]
    for row in rows:
        grid.append([row.variant, str(row.n_seeds)]
                    + [row.cell(m) for m in METRIC_COLUMNS])
    widths = [max(len(line[i]) for line in grid) for i in range(len(headers))]
    lines = []
    for line in grid:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip())
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def write_csv(rows: list[VariantRow], path) -> None:
    """Full-precision values (repr) so the CSV re-parses to identical floats."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["variant", "seeds"]
        for m in METRIC_COLUMNS:
            header += [f"{m}_mean", f"{m}_std"]
        writer.writerow(header)
        for row in rows:
            line = [row.variant, row.n_seeds]
            for m in METRIC_COLUMNS:
                line.append(repr(row.mean[m]))
                line.append(repr(row.std[m]) if row.std else "")
            writer.writerow(line)


def read_csv(path) -> list[VariantRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for rec in reader:
            mean = {m: float(rec[f"{m}_mean"]) for m in METRIC_COLUMNS}
            std = {m: float(rec[f"{m}_std"]) for m in METRIC_COLUMNS} \
                if rec[METRIC_COLUMNS[0] + "_std"] else {}
            rows.append(VariantRow(variant=rec["variant"], n_seeds=int(rec["seeds"]),
                                   mean=mean, std=std))
    return rows


# -------------------------------------------------------------------- figures

def render_ablation_chart(rows: list[VariantRow], path) -> None:
    fig, axes = plt.subplots(2, 2, figsize=(9, 6))
    variants = [r.variant for r in rows]
    x = np.arange(len(variants))
    for ax, metric in zip(axes.ravel(), METRIC_COLUMNS):
        means = [r.mean[metric] for r in rows]
        errs = [r.std.get(metric, 0.0) if r.std else 0.0 for r in rows]
        ax.bar(x, means, yerr=errs, capsize=3, color="#4878a8")
        ax.set_xticks(x)
        ax.set_xticklabels(variants, rotation=15, fontsize=8)
        ax.set_title(METRIC_LABELS[metric], fontsize=10)
        ax.set_ylim(bottom=0)
        ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def render_training_curves(history, path) -> None:
    """history: iterable of objects with epoch/train_loss/train_bce/val_jaccard."""
    epochs = [h.epoch for h in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, [h.train_loss for h in history], label="train loss")
    ax1.plot(epochs, [h.train_bce for h in history], label="train bce", ls="--")
    ax1.set_xlabel("epoch")
    ax1.legend()
    ax1.grid(alpha=0.3)
    ax2.plot(epochs, [h.val_jaccard for h in history], color="#a85448")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation Jaccard")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
