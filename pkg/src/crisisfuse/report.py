"""Run artifacts: deterministic JSON/CSV tables and matplotlib figures.

Metrics files must be byte-identical across reruns of the same seeded
config, so they carry no wall-clock data; the experiment record file
holds timing and version info instead.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import __version__
from .metrics import MetricsReport


def metrics_json_text(report: MetricsReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"


def write_metrics_json(path, report: MetricsReport):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(metrics_json_text(report))
    return path


HISTORY_COLUMNS = ("epoch", "train_loss", "dev_loss", "lr")


def write_history_csv(path, history):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                             for c in HISTORY_COLUMNS])
    return path


def read_history_csv(path):
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.append({
                "epoch": int(row["epoch"]),
                "train_loss": float(row["train_loss"]),
                "dev_loss": float(row["dev_loss"]),
                "lr": float(row["lr"]),
            })
    return out


def plot_loss_curve(path, history):
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [h["train_loss"] for h in history], marker="o", label="train")
    ax.plot(epochs, [h["dev_loss"] for h in history], marker="s", label="dev")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_confusion(path, report: MetricsReport):
    matrix = np.asarray(report.confusion)
    fig, ax = plt.subplots(figsize=(1.2 + 0.6 * len(report.classes),) * 2)
    ax.imshow(matrix, cmap="Blues")
    ax.set_xticks(range(len(report.classes)), report.classes, rotation=45, ha="right")
    ax.set_yticks(range(len(report.classes)), report.classes)
    ax.set_xlabel("predicted")
    ax.set_ylabel("gold")
    for r in range(matrix.shape[0]):
        for c in range(matrix.shape[1]):
            ax.text(c, r, str(int(matrix[r, c])), ha="center", va="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def write_per_class_csv(path, report: MetricsReport):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "precision", "recall", "f1", "support"])
        for c in report.classes:
            row = report.per_class[c]
            writer.writerow([
                c,
                repr(row["precision"]),
                repr(row["recall"]),
                repr(row["f1"]),
                row["support"],
            ])
    return path


ABLATION_COLUMNS = ("name", "accuracy", "macro_f1", "weighted_f1")


def write_ablation_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ABLATION_COLUMNS)
        for row in rows:
            writer.writerow([row["name"]] + [repr(float(row[c])) for c in ABLATION_COLUMNS[1:]])
    return path


def plot_ablation(path, rows):
    names = [r["name"] for r in rows]
    scores = [r["macro_f1"] for r in rows]
    fig, ax = plt.subplots(figsize=(1.5 + 0.9 * len(rows), 4))
    ax.bar(range(len(rows)), scores, color="#4878a8")
    ax.set_xticks(range(len(rows)), names, rotation=30, ha="right")
    ax.set_ylabel("macro F1")
    ax.set_ylim(0.0, 1.0)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


@dataclass
class ExperimentRecord:
    """Everything needed to audit a run, including what metrics omit."""

    config: dict
    metrics: dict
    history: list
    wall_clock_sec: float
    version: str = __version__

    def to_dict(self) -> dict:
        return asdict(self)


def write_record(path, record: ExperimentRecord):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def load_record(path) -> ExperimentRecord:
    with open(path, "r", encoding="utf-8") as fh:
        d = json.load(fh)
    return ExperimentRecord(
        config=d["config"],
        metrics=d["metrics"],
        history=d["history"],
        wall_clock_sec=d["wall_clock_sec"],
        version=d["version"],
    )
