"""Artifact writers: determinism of tables, sanity of figures."""

import json

from crisisfuse.metrics import compute_metrics
from crisisfuse.report import (
    ExperimentRecord,
    load_record,
    metrics_json_text,
    plot_ablation,
    plot_confusion,
    plot_loss_curve,
    read_history_csv,
    write_ablation_csv,
    write_history_csv,
    write_metrics_json,
    write_record,
)

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

HISTORY = [
    {"epoch": 0, "train_loss": 1.09861228866810969, "dev_loss": 1.05, "lr": 0.002},
    {"epoch": 1, "train_loss": 0.9, "dev_loss": 0.95, "lr": 0.002},
    {"epoch": 2, "train_loss": 0.7, "dev_loss": 0.97, "lr": 0.0002},
]


def _report():
    return compute_metrics(["a", "a", "b", "c"], ["a", "c", "b", "b"], ("a", "b", "c"))


def test_metrics_json_is_reproducible_bytewise(tmp_path):
    p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
    write_metrics_json(p1, _report())
    write_metrics_json(p2, _report())
    assert p1.read_bytes() == p2.read_bytes()
    data = json.loads(p1.read_text())
    assert data["accuracy"] == 0.5
    assert "wall_clock" not in p1.read_text()


def test_metrics_json_text_sorted_keys():
    text = metrics_json_text(_report())
    data = json.loads(text)
    assert list(data) == sorted(data)


def test_history_csv_round_trip(tmp_path):
    path = tmp_path / "history.csv"
    write_history_csv(path, HISTORY)
    assert read_history_csv(path) == HISTORY  # repr round-trips floats exactly


def test_figures_are_png_files(tmp_path):
    loss = plot_loss_curve(tmp_path / "loss.png", HISTORY)
    conf = plot_confusion(tmp_path / "confusion.png", _report())
    rows = [
        {"name": "full", "accuracy": 0.9, "macro_f1": 0.88, "weighted_f1": 0.9},
        {"name": "-dropout", "accuracy": 0.85, "macro_f1": 0.8, "weighted_f1": 0.84},
    ]
    abl = plot_ablation(tmp_path / "ablation.png", rows)
    for p in (loss, conf, abl):
        blob = p.read_bytes()
        assert blob.startswith(PNG_MAGIC)
        assert len(blob) > 1000


def test_ablation_csv_contents(tmp_path):
    path = tmp_path / "ablation.csv"
    rows = [{"name": "full", "accuracy": 0.9, "macro_f1": 0.875, "weighted_f1": 0.9}]
    write_ablation_csv(path, rows)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "name,accuracy,macro_f1,weighted_f1"
    assert lines[1] == "full,0.9,0.875,0.9"


def test_per_class_csv(tmp_path):
    from crisisfuse.report import write_per_class_csv

    path = write_per_class_csv(tmp_path / "per_class.csv", _report())
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "class,precision,recall,f1,support"
    assert len(lines) == 4
    assert lines[1].startswith("a,1.0,0.5,")


def test_experiment_record_round_trips_to_equal_values(tmp_path):
    record = ExperimentRecord(
        config={"variant": "full", "seed": 3, "lr": 0.002},
        metrics=_report().to_dict(),
        history=HISTORY,
        wall_clock_sec=12.3456789,
    )
    path = tmp_path / "record.json"
    write_record(path, record)
    assert load_record(path) == record
