"""End-to-end command behavior: artifacts, exit codes, determinism."""

import json

import numpy as np
import pytest

from crisisfuse.cli import main
from crisisfuse.data import SynthConfig, generate_corpus, load_dataset, save_dataset

FAST = [
    "--synth-n", "100", "--synth-classes", "2", "--synth-d-image", "8",
    "--synth-d-text", "8", "--k", "4", "--max-epochs", "2", "--seed", "0",
]


def test_train_writes_the_full_artifact_set(tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--out", str(out)] + FAST) == 0
    for name in ("effective_config.json", "metrics.json", "record.json",
                 "history.csv", "per_class.csv", "loss_curve.png",
                 "confusion.png", "model.ckpt"):
        assert (out / name).exists(), name
    record = json.loads((out / "record.json").read_text())
    assert record["wall_clock_sec"] > 0
    assert record["version"]
    assert record["config"]["seed"] == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert "wall_clock_sec" not in metrics


def test_same_config_and_seed_give_byte_identical_metrics(tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["train", "--out", str(out1)] + FAST) == 0
    assert main(["train", "--out", str(out2)] + FAST) == 0
    assert (out1 / "metrics.json").read_bytes() == (out2 / "metrics.json").read_bytes()
    assert (out1 / "history.csv").read_bytes() == (out2 / "history.csv").read_bytes()
    assert (out1 / "effective_config.json").read_bytes() == (out2 / "effective_config.json").read_bytes()


def test_eval_reproduces_training_test_metrics(tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--out", str(out)] + FAST) == 0
    ev = tmp_path / "eval"
    assert main(["eval", "--checkpoint", str(out / "model.ckpt"), "--out", str(ev)]) == 0
    assert (ev / "metrics.json").read_bytes() == (out / "metrics.json").read_bytes()
    assert (ev / "confusion.png").exists()


def test_config_file_and_flag_precedence(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"seed": 5, "k": 6, "max_epochs": 1,
                                    "synth_n": 80, "synth_classes": 2,
                                    "synth_d_image": 8, "synth_d_text": 8}))
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_path), "--out", str(out), "--seed", "7"]) == 0
    echo = json.loads((out / "effective_config.json").read_text())
    assert echo["seed"] == 7      # flag beats file
    assert echo["k"] == 6         # file beats default
    assert echo["batch_size"] == 32  # default survives


def test_unknown_config_key_is_a_config_error(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"learning_rate": 0.1}))
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "x")]) == 2


def test_feature_fusion_echo_disables_attention_and_swaps(tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--out", str(out), "--variant", "feature_fusion"] + FAST) == 0
    echo = json.loads((out / "effective_config.json").read_text())
    assert echo["variant"] == "feature_fusion"
    assert echo["attention_mode"] == "none"
    assert echo["self_attention_on_joint"] is False
    assert echo["sse"] is False
    for key in ("sse_p0_image", "sse_rho_image", "sse_p0_text", "sse_rho_text"):
        assert echo[key] == 0.0


def test_config_error_exit_codes(tmp_path):
    out = str(tmp_path / "x")
    assert main(["train", "--out", out, "--setting", "e"]) == 2
    assert main(["train", "--out", out, "--setting", "c"] + FAST) == 2  # no test event
    assert main(["train", "--out", out, "--variant", "dual_cross", "--setting", "a"]) == 2
    assert main(["train", "--out", out, "--dropout", "1.5"] + FAST) == 2
    assert main(["train", "--no-such-flag"]) == 2
    assert main(["train", "--out", out, "--data", str(tmp_path / "missing.jsonl")]) == 2


def test_divergence_exits_3(tmp_path):
    corpus = generate_corpus(SynthConfig(n=40, n_classes=2, d_image=8, d_text=8, seed=0))
    for s in corpus:
        s.image_vec = s.image_vec.copy()
        s.image_vec[0] = np.nan
    data = tmp_path / "bad.jsonl"
    save_dataset(data, corpus)
    out = tmp_path / "run"
    code = main(["train", "--out", str(out), "--data", str(data),
                 "--k", "4", "--max-epochs", "2", "--seed", "0"])
    assert code == 3


def test_gradcheck_exit_codes(tmp_path, capsys):
    ok = main(["gradcheck", "--out", str(tmp_path / "gc"), "--synth-classes", "3",
               "--synth-d-image", "6", "--synth-d-text", "6", "--k", "5", "--seed", "0"])
    assert ok == 0
    report = json.loads((tmp_path / "gc" / "gradcheck.json").read_text())
    assert report and all(v < 1e-4 for v in report.values())
    capsys.readouterr()
    bad = main(["gradcheck", "--out", str(tmp_path / "gc2"), "--synth-classes", "2",
                "--synth-d-image", "4", "--synth-d-text", "4", "--k", "3",
                "--seed", "0", "--tol", "1e-12"])
    assert bad == 4
    err = capsys.readouterr().err
    assert "worst parameter" in err


def test_ablate_writes_all_rows_with_shared_seed(tmp_path):
    out = tmp_path / "abl"
    args = ["ablate", "--out", str(out), "--synth-n", "80", "--synth-classes", "2",
            "--synth-d-image", "8", "--synth-d-text", "8", "--k", "4",
            "--max-epochs", "1", "--seed", "0"]
    assert main(args) == 0
    lines = (out / "ablation.csv").read_text().strip().splitlines()
    names = [line.split(",")[0] for line in lines[1:]]
    assert names == ["full", "-self-attention", "-cross-attention",
                     "-cross+co", "-cross+self", "-dropout", "-SSE"]
    assert (out / "ablation.png").exists()
    assert main(["ablate", "--out", str(tmp_path / "d"), "--variant", "dual_cross",
                 "--setting", "d"]) == 2


def test_sse_table_empty_dataset_writes_header_only(tmp_path):
    data = tmp_path / "empty.jsonl"
    data.write_text("")
    out = tmp_path / "sse"
    assert main(["sse-table", "--out", str(out), "--data", str(data)]) == 0
    assert (out / "sse_table_image.csv").read_bytes() == b"node_id\r\n"


def test_sse_table_over_a_corpus(tmp_path):
    corpus = generate_corpus(SynthConfig(n=8, n_classes=2, d_image=8, d_text=8, seed=0))
    data = tmp_path / "c.jsonl"
    save_dataset(data, corpus)
    out = tmp_path / "sse"
    assert main(["sse-table", "--out", str(out), "--data", str(data),
                 "--modality", "text", "--sse-p0-text", "0.5", "--sse-rho-text", "10"]) == 0
    lines = (out / "sse_table_text.csv").read_text().strip().splitlines()
    assert len(lines) == 9  # header + one row per sample
    row = [float(x) for x in lines[1].split(",")[1:]]
    assert abs(sum(row) - 1.0) < 1e-12
    assert main(["sse-table", "--out", str(out), "--modality", "smell"]) == 2


def test_gen_synth_round_trips_through_the_loader(tmp_path):
    data = tmp_path / "corpus.jsonl"
    assert main(["gen-synth", "--out", str(data), "--synth-n", "40",
                 "--synth-classes", "2", "--synth-inconsistent", "0.2", "--seed", "1"]) == 0
    corpus = load_dataset(data)
    assert len(corpus) == 40
    assert any(not s.consistent for s in corpus)
    assert (tmp_path / "corpus.jsonl.config.json").exists()


def test_dual_variant_trains_under_setting_d(tmp_path):
    out = tmp_path / "dual"
    code = main(["train", "--out", str(out), "--variant", "dual_cross", "--setting", "d",
                 "--synth-n", "60", "--synth-classes", "2", "--synth-d-image", "8",
                 "--synth-d-text", "8", "--synth-inconsistent", "0.2",
                 "--k", "4", "--max-epochs", "1", "--seed", "0"])
    assert code == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert "text_head" in metrics["extra"]


def test_version_flag():
    # argparse handles --version with SystemExit(0); main converts it
    assert main(["--version"]) == 0
