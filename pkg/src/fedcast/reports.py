"""Report writers: round logs and metric tables as CSV/JSON, plus rendered
figures saved next to the delimited output.

Floats are written with repr precision so identical runs produce identical
files; wall-clock times never enter these files (they live in the run's
metadata JSON, which is excluded from determinism comparisons).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import MetricReport

_PNG_META = {"Software": None}  # keep PNGs byte-stable across environments


def _fmt(x: float) -> str:
    return repr(float(x))


def write_round_log(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "client", "train_loss", "val_loss",
                         "avg_val_loss", "comm_bytes"])
        for rec in records:
            for client in rec.train_loss:
                writer.writerow([rec.round_index, client,
                                 _fmt(rec.train_loss[client]),
                                 _fmt(rec.val_loss[client]),
                                 _fmt(rec.avg_val_loss),
                                 rec.comm_bytes[client]])


def write_metric_csv(report: MetricReport, path) -> None:
    has_source = any(r.source is not None for r in report.records)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["domain", "horizon", "mse", "mae"]
        if has_source:
            header.append("source")
        writer.writerow(header)
        for r in report.records:
            row = [r.domain, r.horizon, _fmt(r.mse), _fmt(r.mae)]
            if has_source:
                row.append(r.source or "")
            writer.writerow(row)
        for name in report.excluded:
            row = [name, "-", "-", "-"]
            if has_source:
                row.append("")
            writer.writerow(row)


def write_metric_json(report: MetricReport, path) -> None:
    doc = {
        "records": [{"domain": r.domain, "horizon": r.horizon, "mse": r.mse,
                     "mae": r.mae, **({"source": r.source} if r.source else {})}
                    for r in report.records],
        "domain_average": {d: {"mse": m, "mae": a}
                           for d, (m, a) in sorted(report.domain_average().items())},
        "excluded": list(report.excluded),
    }
    mse, mae = report.overall_average()
    doc["overall_average"] = {"mse": mse, "mae": mae}
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------

def save_training_curve(records, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    rounds = [r.round_index for r in records]
    if records:
        clients = sorted(records[0].val_loss)
        for client in clients:
            ax.plot(rounds, [r.val_loss[client] for r in records],
                    alpha=0.45, linewidth=1, label=client)
        ax.plot(rounds, [r.avg_val_loss for r in records], color="black",
                linewidth=2, label="average")
    ax.set_xlabel("round")
    ax.set_ylabel("validation MSE")
    ax.set_yscale("log")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def save_metric_bars(report: MetricReport, path) -> None:
    per_domain = report.domain_average()
    fig, ax = plt.subplots(figsize=(7, 4))
    if per_domain:
        names = sorted(per_domain)
        x = np.arange(len(names))
        ax.bar(x - 0.2, [per_domain[n][0] for n in names], width=0.4, label="MSE")
        ax.bar(x + 0.2, [per_domain[n][1] for n in names], width=0.4, label="MAE")
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def save_score_heatmap(matrix: np.ndarray, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(matrix, aspect="auto", cmap="viridis")
    ax.set_xlabel("patch token")
    ax.set_ylabel("prototype")
    if title:
        ax.set_title(title, fontsize=9)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def save_overlap_heatmap(matrix: np.ndarray, labels, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(matrix, vmin=0.0, vmax=1.0, cmap="magma")
    ax.set_xticks(range(len(labels)))
    ax.set_yticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_yticklabels(labels, fontsize=8)
    for i in range(len(labels)):
        for j in range(len(labels)):
            ax.text(j, i, f"{matrix[i, j]:.2f}", ha="center", va="center",
                    fontsize=7, color="white")
    ax.set_title("prototype overlap (Jaccard)", fontsize=9)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
