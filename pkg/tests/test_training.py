"""Training loop behavior: schedule, determinism, swaps, tuning."""

import numpy as np
import pytest

from crisisfuse.data import Splits, SynthConfig, generate_corpus, split_setting_a, split_setting_b, split_setting_d
from crisisfuse.sse import SSEParams
from crisisfuse.training import (
    TrainConfig,
    TrainingDivergedError,
    TuneResult,
    build_model,
    evaluate,
    evaluate_dual,
    fusion_config_for_variant,
    load_model,
    mean_loss,
    model_for_corpus,
    save_model,
    train,
    tune,
    validate_grid,
)


def _vec_splits(n=100, n_classes=2, seed=0, **kw):
    corpus = generate_corpus(SynthConfig(
        n=n, n_classes=n_classes, d_image=8, d_text=8, noise=0.05,
        misleading_frac=0.0, seed=seed, **kw,
    ))
    return split_setting_a(corpus, seed=seed)


def _tiny_model(splits, variant="full", k=4, dropout=0.0, seed=0):
    return model_for_corpus(
        splits.train, splits.task.classes, variant=variant, k=k, dropout=dropout, seed=seed
    )


# -- variant wiring ----------------------------------------------------------

def test_variant_wiring():
    base = dict(d_image=8, d_text=8, num_classes=3, k=4)
    assert fusion_config_for_variant("full", **base).attention_mode == "cross"
    assert fusion_config_for_variant("full", **base).self_attention_on_joint
    assert fusion_config_for_variant("feature_fusion", **base).attention_mode == "none"
    assert not fusion_config_for_variant("feature_fusion", **base).self_attention_on_joint
    assert fusion_config_for_variant("variant1", **base).attention_mode == "co"
    cfg2 = fusion_config_for_variant("variant2", **base)
    assert cfg2.attention_mode == "cross" and not cfg2.self_attention_on_joint
    assert fusion_config_for_variant("variant3", **base).attention_mode == "self"
    with pytest.raises(ValueError, match="unknown variant"):
        fusion_config_for_variant("bogus", **base)


def test_shared_seed_shares_initial_weights_across_variants():
    splits = _vec_splits()
    full = _tiny_model(splits, "full", seed=7)
    no_joint = _tiny_model(splits, "variant2", seed=7)
    by_name = {p.name: p.value for p in full.parameters()}
    for p in no_joint.parameters():
        assert np.array_equal(p.value, by_name[p.name])


# -- schedule ----------------------------------------------------------------

def test_plateau_decays_then_stops():
    splits = _vec_splits(n=40)
    model = _tiny_model(splits)
    cfg = TrainConfig(lr=1e-30, batch_size=8, max_epochs=40, patience=3,
                      lr_decay=10.0, max_decays=2, seed=0)
    _, _, history = train(cfg, splits, model)
    lrs = [h["lr"] for h in history]
    # frozen params: dev loss never improves after the first epoch, so
    # every third epoch exhausts patience: decay, decay, stop
    assert len(history) == 10
    assert lrs == [1e-30] * 4 + [1e-31] * 3 + [1e-32] * 3
    assert all(h["dev_loss"] == history[0]["dev_loss"] for h in history)


def test_training_returns_best_dev_parameters():
    splits = _vec_splits(n=120)
    model = _tiny_model(splits, dropout=0.5)
    cfg = TrainConfig(lr=0.02, batch_size=16, max_epochs=8, seed=1)
    model, _, history = train(cfg, splits, model)
    best = min(h["dev_loss"] for h in history)
    assert mean_loss(model, splits.dev) == best


def test_divergence_raises_with_epoch():
    splits = _vec_splits(n=40)
    model = _tiny_model(splits)
    splits.train[3].image_vec = splits.train[3].image_vec.copy()
    splits.train[3].image_vec[0] = np.nan
    cfg = TrainConfig(lr=0.01, batch_size=8, max_epochs=6, seed=0)
    with pytest.raises(TrainingDivergedError) as err:
        train(cfg, splits, model)
    assert err.value.epoch == 0


def test_empty_train_split_rejected():
    splits = _vec_splits(n=40)
    empty = Splits(train=[], dev=splits.dev, test=splits.test, task=splits.task)
    with pytest.raises(ValueError, match="empty"):
        train(TrainConfig(max_epochs=1), empty, _tiny_model(splits))


# -- determinism -------------------------------------------------------------

def test_identical_config_and_seed_reproduce_bitwise():
    splits = _vec_splits(n=80)
    cfg = TrainConfig(lr=0.01, batch_size=16, max_epochs=4, seed=3,
                      sse_image=SSEParams(0.3, 100.0), sse_text=SSEParams(0.3, 100.0))
    runs = []
    for _ in range(2):
        model = _tiny_model(splits, dropout=0.5, seed=3)
        model, report, history = train(cfg, splits, model)
        runs.append((model, report, history))
    assert runs[0][2] == runs[1][2]
    assert runs[0][1].to_dict() == runs[1][1].to_dict()
    for a, b in zip(runs[0][0].parameters(), runs[1][0].parameters()):
        assert np.array_equal(a.value, b.value)


def test_different_seed_changes_the_run():
    splits = _vec_splits(n=80)
    histories = []
    for seed in (0, 1):
        model = _tiny_model(splits, dropout=0.5, seed=seed)
        _, _, history = train(
            TrainConfig(lr=0.01, batch_size=16, max_epochs=3, seed=seed), splits, model
        )
        histories.append(history)
    assert histories[0] != histories[1]


def test_zero_stay_probability_matches_swaps_disabled_bitwise():
    splits = _vec_splits(n=80)
    outs = []
    for sse in (None, SSEParams(0.0, 900.0)):
        model = _tiny_model(splits, dropout=0.5, seed=2)
        cfg = TrainConfig(lr=0.01, batch_size=16, max_epochs=3, seed=2,
                          sse_image=sse, sse_text=sse)
        model, _, history = train(cfg, splits, model)
        outs.append((model, history))
    assert outs[0][1] == outs[1][1]
    for a, b in zip(outs[0][0].parameters(), outs[1][0].parameters()):
        assert np.array_equal(a.value, b.value)


# -- learning sanity ---------------------------------------------------------

def test_learns_a_separable_problem():
    splits = _vec_splits(n=200, n_classes=2)
    model = _tiny_model(splits, k=8, dropout=0.0)
    cfg = TrainConfig(lr=0.05, batch_size=16, max_epochs=40, seed=0)
    model, report, _ = train(cfg, splits, model)
    assert report.accuracy >= 0.99


def test_forced_swaps_require_text_parameters():
    corpus = generate_corpus(SynthConfig(n=80, n_classes=2, d_image=8, d_text=8,
                                         inconsistent_frac=0.2, seed=0))
    splits = split_setting_b(corpus, seed=0)
    assert splits.forced_ids
    model = _tiny_model(splits)
    with pytest.raises(ValueError, match="text-side swap parameters"):
        train(TrainConfig(max_epochs=1), splits, model)


def test_setting_b_training_runs_with_forced_swaps():
    corpus = generate_corpus(SynthConfig(n=80, n_classes=2, d_image=8, d_text=8,
                                         inconsistent_frac=0.2, seed=0))
    splits = split_setting_b(corpus, seed=0)
    model = _tiny_model(splits)
    cfg = TrainConfig(lr=0.02, batch_size=16, max_epochs=2, seed=0,
                      sse_image=SSEParams(0.36, 900.0), sse_text=SSEParams(0.27, 900.0))
    _, report, history = train(cfg, splits, model)
    assert len(history) == 2
    assert 0.0 <= report.accuracy <= 1.0


# -- evaluation --------------------------------------------------------------

def test_dual_evaluation_reports_both_heads():
    corpus = generate_corpus(SynthConfig(n=60, n_classes=3, d_image=9, d_text=9,
                                         inconsistent_frac=0.2, seed=1))
    splits = split_setting_d(corpus, seed=1)
    model = model_for_corpus(splits.train, splits.task.classes,
                             variant="dual_cross", k=4, dropout=0.0, seed=0)
    ri, rt = evaluate_dual(model, splits.test)
    assert ri.n == rt.n == len(splits.test)
    merged = evaluate(model, splits.test)
    assert merged.extra["head"] == "image"
    assert merged.extra["text_head"]["accuracy"] == rt.accuracy


def test_dual_variants_train_one_epoch():
    corpus = generate_corpus(SynthConfig(n=48, n_classes=2, d_image=8, d_text=8,
                                         inconsistent_frac=0.1, seed=2))
    splits = split_setting_d(corpus, seed=2)
    for variant in ("dual_cross", "dual_self", "dual_self_cross"):
        model = model_for_corpus(splits.train, splits.task.classes,
                                 variant=variant, k=4, dropout=0.0, seed=0)
        _, report, history = train(TrainConfig(lr=0.01, batch_size=16, max_epochs=1, seed=0),
                                   splits, model)
        assert len(history) == 1
        assert "text_head" in report.extra


# -- tuning ------------------------------------------------------------------

def test_grid_validation_bounds():
    with pytest.raises(ValueError, match="rho"):
        validate_grid([{"image": SSEParams(0.3, 5.0)}])
    with pytest.raises(ValueError, match="rho"):
        validate_grid([{"text": SSEParams(0.3, 20001.0)}])
    with pytest.raises(ValueError, match="empty"):
        validate_grid([])
    validate_grid([{"image": SSEParams(0.3, 10.0), "text": SSEParams(0.0, 20000.0)}])


def test_tune_picks_earliest_on_ties_and_respects_protocols():
    splits = _vec_splits(n=60)
    cfg = TrainConfig(lr=0.01, batch_size=16, max_epochs=2, seed=0)

    def factory():
        return _tiny_model(splits, seed=0)

    grid = [
        {"image": SSEParams(0.0, 900.0), "text": None},
        {"image": None, "text": SSEParams(0.0, 900.0)},
    ]
    result = tune(cfg, splits, factory, grid, protocol="dev")
    assert isinstance(result, TuneResult)
    assert len(result.rows) == 2
    assert result.rows[0]["accuracy"] == result.rows[1]["accuracy"]
    assert result.best is result.rows[0]

    held = tune(cfg, splits, factory, grid[:1], protocol="fifteen_percent")
    assert len(held.rows) == 1
    with pytest.raises(ValueError, match="protocol"):
        tune(cfg, splits, factory, grid, protocol="loocv")


def test_tune_dev_protocol_needs_dev():
    splits = _vec_splits(n=60)
    no_dev = Splits(train=splits.train, dev=[], test=splits.test, task=splits.task)
    with pytest.raises(ValueError, match="dev"):
        tune(TrainConfig(), no_dev, lambda: _tiny_model(splits), [{"image": None, "text": None}])


# -- checkpoints -------------------------------------------------------------

def test_model_checkpoint_round_trip(tmp_path):
    splits = _vec_splits(n=60)
    model = _tiny_model(splits, variant="variant1", seed=4)
    train(TrainConfig(lr=0.01, batch_size=16, max_epochs=1, seed=4), splits, model)
    path = tmp_path / "model.ckpt"
    save_model(path, model, extra_meta={"note": "round trip"})
    back, meta = load_model(path)
    assert back.classes == model.classes
    assert back.variant == "variant1"
    assert meta["extra"]["note"] == "round trip"
    for s in splits.test[:10]:
        assert back.predict_sample(s) == model.predict_sample(s)


def test_raw_mode_model_checkpoint_round_trip(tmp_path):
    corpus = generate_corpus(SynthConfig(n=40, n_classes=2, mode="raw", seed=0, image_size=8))
    splits = split_setting_a(corpus, seed=0)
    model = model_for_corpus(splits.train, splits.task.classes, k=4, dropout=0.0,
                             seed=0, image_feat=6, text_feat=6, vocab=64)
    train(TrainConfig(lr=0.01, batch_size=16, max_epochs=1, seed=0), splits, model)
    path = tmp_path / "raw.ckpt"
    save_model(path, model)
    back, _ = load_model(path)
    for s in splits.test[:5]:
        assert back.predict_sample(s) == model.predict_sample(s)


def test_featurize_errors_name_the_sample():
    splits = _vec_splits(n=40)
    model = _tiny_model(splits)
    raw = generate_corpus(SynthConfig(n=4, n_classes=2, mode="raw", seed=0))[0]
    with pytest.raises(ValueError, match="s00000"):
        model.featurize_image(raw)


def test_model_for_corpus_rejects_empty():
    with pytest.raises(ValueError, match="empty"):
        model_for_corpus([], ("a", "b"))
