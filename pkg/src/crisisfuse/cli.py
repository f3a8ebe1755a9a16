"""Command line front end.

Subcommands: train, eval, ablate, sse-table, gradcheck, gen-synth.
Settings come from defaults, then a JSON config file, then flags, in
rising precedence. Every run writes the merged config it actually used.

Exit codes: 0 success, 2 bad configuration, 3 training failure,
4 gradient check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    DEFAULT_FRACTIONS_D,
    ProtocolError,
    SynthConfig,
    generate_corpus,
    load_dataset,
    save_dataset,
    split_setting_a,
    split_setting_b,
    split_setting_c,
    split_setting_d,
)
from .kernel import Rng, gradient_check, softmax_cross_entropy
from .metrics import MetricsReport
from .multilabel import dual_loss
from .report import (
    ExperimentRecord,
    plot_ablation,
    plot_confusion,
    plot_loss_curve,
    write_ablation_csv,
    write_history_csv,
    write_metrics_json,
    write_per_class_csv,
    write_record,
)
from .sse import SSEParams, build_graph, write_table_csv
from .training import (
    TrainConfig,
    TrainingDivergedError,
    VARIANTS,
    build_model,
    evaluate,
    is_dual,
    load_model,
    model_for_corpus,
    save_model,
    train,
)


class ConfigError(Exception):
    pass


SETTINGS = ("a", "b", "c", "d")


@dataclass
class RunConfig:
    """Everything a run needs; one flat namespace shared by all commands."""

    data: str | None = None  # dataset path; None means generate synthetic
    setting: str = "a"
    task: int = 0  # 0 infers the class list from the data
    variant: str = "full"
    seed: int = 0
    k: int = 100
    hidden: int | None = None
    fuse_mode: str = "concat"
    dropout: float = 0.5
    lr: float = 2e-3
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 3
    lr_decay: float = 10.0
    max_decays: int = 2
    sse: bool = True
    sse_p0_image: float = 0.36
    sse_rho_image: float = 900.0
    sse_p0_text: float = 0.27
    sse_rho_text: float = 900.0
    test_event: str | None = None
    train_events: str | None = None  # comma separated
    train_frac: float = 0.70
    dev_frac: float = 0.05
    test_frac: float = 0.25
    d_train_frac: float = DEFAULT_FRACTIONS_D[0]
    d_test_frac: float = DEFAULT_FRACTIONS_D[1]
    image_feat: int = 32
    text_feat: int = 32
    vocab: int = 256
    synth_n: int = 2500
    synth_classes: int = 5
    synth_d_image: int = 24
    synth_d_text: int = 24
    synth_mode: str = "vec"
    synth_misleading: float = 0.2
    synth_inconsistent: float = 0.0
    synth_noise: float = 0.15
    synth_flag_low: float = 0.1
    synth_flag_high: float = 1.0
    synth_lie_scale: float = 1.5
    synth_events: int = 4
    synth_image_size: int = 12


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}

_BOOL_FIELDS = {"sse"}
_INT_FIELDS = {
    "task", "seed", "k", "hidden", "batch_size", "max_epochs", "patience",
    "max_decays", "image_feat", "text_feat", "vocab", "synth_n",
    "synth_classes", "synth_d_image", "synth_d_text", "synth_events",
    "synth_image_size",
}
_FLOAT_FIELDS = {
    "dropout", "lr", "lr_decay", "sse_p0_image", "sse_rho_image",
    "sse_p0_text", "sse_rho_text", "train_frac", "dev_frac", "test_frac",
    "d_train_frac", "d_test_frac", "synth_misleading", "synth_inconsistent",
    "synth_noise", "synth_flag_low", "synth_flag_high", "synth_lie_scale",
}


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON file with RunConfig fields")
    parser.add_argument("--out", help="output directory (default runs/<command>)")
    for name in _FIELDS:
        flag = "--" + name.replace("_", "-")
        if name in _BOOL_FIELDS:
            parser.add_argument(flag, action=argparse.BooleanOptionalAction, default=None)
        elif name in _INT_FIELDS:
            parser.add_argument(flag, type=int, default=None)
        elif name in _FLOAT_FIELDS:
            parser.add_argument(flag, type=float, default=None)
        else:
            parser.add_argument(flag, type=str, default=None)


def make_config(args) -> RunConfig:
    """defaults < config file < explicit flags."""
    merged = dataclasses.asdict(RunConfig())
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in file_cfg.items():
            if key not in _FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = value
    for name in _FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    cfg = RunConfig(**merged)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig):
    if cfg.setting not in SETTINGS:
        raise ConfigError(f"setting must be one of {SETTINGS}, got {cfg.setting!r}")
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {cfg.variant!r}")
    if is_dual(cfg.variant) and cfg.setting != "d":
        raise ConfigError(f"variant {cfg.variant!r} needs setting d (dual-head protocol)")
    if cfg.task not in (0, 1, 2, 3):
        raise ConfigError(f"task must be 0 (infer), 1, 2 or 3, got {cfg.task}")
    if not 0.0 <= cfg.dropout < 1.0:
        raise ConfigError(f"dropout must be in [0, 1), got {cfg.dropout}")
    if cfg.lr <= 0 or cfg.batch_size < 1 or cfg.max_epochs < 1:
        raise ConfigError("lr, batch_size and max_epochs must be positive")
    if cfg.patience < 1 or cfg.lr_decay <= 1 or cfg.max_decays < 0:
        raise ConfigError("need patience >= 1, lr_decay > 1, max_decays >= 0")
    for name in ("train_frac", "dev_frac", "test_frac", "d_train_frac", "d_test_frac"):
        if getattr(cfg, name) < 0:
            raise ConfigError(f"{name} must be non-negative")
    if cfg.train_frac <= 0 or cfg.d_train_frac <= 0:
        raise ConfigError("training fraction must be positive")
    if cfg.sse:
        for side in ("image", "text"):
            p0 = getattr(cfg, f"sse_p0_{side}")
            rho = getattr(cfg, f"sse_rho_{side}")
            if not 0.0 <= p0 <= 1.0:
                raise ConfigError(f"sse_p0_{side} must be in [0, 1], got {p0}")
            if rho <= 0:
                raise ConfigError(f"sse_rho_{side} must be positive, got {rho}")
    if cfg.setting == "c" and not cfg.test_event:
        raise ConfigError("setting c needs --test-event")
    if cfg.setting == "b" and not sse_enabled(cfg):
        raise ConfigError(
            "setting b flags inconsistent pairs for forced text swaps, which need sse enabled"
        )


def sse_enabled(cfg: RunConfig) -> bool:
    return cfg.sse and cfg.variant != "feature_fusion"


def effective_config(cfg: RunConfig, command: str) -> dict:
    """The merged config a run actually used, with wiring spelled out."""
    d = dataclasses.asdict(cfg)
    d["command"] = command
    d["version"] = __version__
    if is_dual(cfg.variant):
        d["attention_mode"] = "dual_" + cfg.variant.removeprefix("dual_")
        d["self_attention_on_joint"] = False
    else:
        d["attention_mode"] = {
            "full": "cross", "feature_fusion": "none", "variant1": "co",
            "variant2": "cross", "variant3": "self",
        }[cfg.variant]
        d["self_attention_on_joint"] = cfg.variant in ("full", "variant1", "variant3")
    if not sse_enabled(cfg):
        d["sse"] = False
        for key in ("sse_p0_image", "sse_rho_image", "sse_p0_text", "sse_rho_text"):
            d[key] = 0.0
    return d


def write_effective_config(out_dir: Path, echo: dict):
    path = out_dir / "effective_config.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(echo, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _synth_config(cfg: RunConfig) -> SynthConfig:
    return SynthConfig(
        n=cfg.synth_n,
        n_classes=cfg.synth_classes,
        d_image=cfg.synth_d_image,
        d_text=cfg.synth_d_text,
        mode=cfg.synth_mode,
        misleading_frac=cfg.synth_misleading,
        inconsistent_frac=cfg.synth_inconsistent,
        noise=cfg.synth_noise,
        flag_low=cfg.synth_flag_low,
        flag_high=cfg.synth_flag_high,
        lie_scale=cfg.synth_lie_scale,
        n_events=cfg.synth_events,
        seed=cfg.seed,
        image_size=cfg.synth_image_size,
    )


def load_or_generate(cfg: RunConfig):
    if cfg.data:
        return load_dataset(cfg.data)
    return generate_corpus(_synth_config(cfg))


def build_splits(cfg: RunConfig, corpus):
    task = cfg.task or None
    fractions = (cfg.train_frac, cfg.dev_frac, cfg.test_frac)
    if cfg.setting == "a":
        return split_setting_a(corpus, task, fractions, cfg.seed)
    if cfg.setting == "b":
        return split_setting_b(corpus, task, None, fractions, cfg.seed)
    if cfg.setting == "c":
        events = cfg.train_events.split(",") if cfg.train_events else None
        return split_setting_c(corpus, cfg.test_event, events, task)
    return split_setting_d(corpus, task, (cfg.d_train_frac, cfg.d_test_frac), cfg.seed)


def build_run_model(cfg: RunConfig, splits, **overrides):
    return model_for_corpus(
        splits.train,
        splits.task.classes,
        variant=cfg.variant,
        k=cfg.k,
        hidden=cfg.hidden,
        fuse_mode=cfg.fuse_mode,
        dropout=cfg.dropout,
        seed=cfg.seed,
        image_feat=cfg.image_feat,
        text_feat=cfg.text_feat,
        vocab=cfg.vocab,
        **overrides,
    )


def train_config_from(cfg: RunConfig, zero_swap_mass: bool = False) -> TrainConfig:
    if sse_enabled(cfg):
        p0_img = 0.0 if zero_swap_mass else cfg.sse_p0_image
        p0_txt = 0.0 if zero_swap_mass else cfg.sse_p0_text
        sse_image = SSEParams(p0_img, cfg.sse_rho_image)
        sse_text = SSEParams(p0_txt, cfg.sse_rho_text)
    else:
        sse_image = sse_text = None
    return TrainConfig(
        lr=cfg.lr,
        batch_size=cfg.batch_size,
        max_epochs=cfg.max_epochs,
        patience=cfg.patience,
        lr_decay=cfg.lr_decay,
        max_decays=cfg.max_decays,
        seed=cfg.seed,
        sse_image=sse_image,
        sse_text=sse_text,
    )


def _out_dir(args, command: str) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else Path("runs") / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print_report(report: MetricsReport, prefix: str = ""):
    print(f"{prefix}accuracy={report.accuracy:.4f} "
          f"macro_f1={report.macro_f1:.4f} weighted_f1={report.weighted_f1:.4f} n={report.n}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = make_config(args)
    out = _out_dir(args, "train")
    echo = effective_config(cfg, "train")
    write_effective_config(out, echo)
    corpus = load_or_generate(cfg)
    splits = build_splits(cfg, corpus)
    model = build_run_model(cfg, splits)
    start = time.perf_counter()
    model, report, history = train(train_config_from(cfg), splits, model)
    wall = time.perf_counter() - start
    write_metrics_json(out / "metrics.json", report)
    write_history_csv(out / "history.csv", history)
    plot_loss_curve(out / "loss_curve.png", history)
    plot_confusion(out / "confusion.png", report)
    write_per_class_csv(out / "per_class.csv", report)
    write_record(out / "record.json", ExperimentRecord(
        config=echo, metrics=report.to_dict(), history=history, wall_clock_sec=wall,
    ))
    save_model(out / "model.ckpt", model, extra_meta={"effective_config": echo})
    _print_report(report)
    print(f"wrote {out}")
    return 0


def cmd_eval(args) -> int:
    model, meta = load_model(args.checkpoint)
    echo = meta.get("extra", {}).get("effective_config")
    if not echo:
        raise ConfigError(f"checkpoint {args.checkpoint} has no embedded run config")
    merged = {k: v for k, v in echo.items() if k in _FIELDS}
    cfg = RunConfig(**merged)
    if getattr(args, "data", None):
        cfg = dataclasses.replace(cfg, data=args.data)
    out = _out_dir(args, "eval")
    corpus = load_or_generate(cfg)
    splits = build_splits(cfg, corpus)
    report = evaluate(model, splits.test)
    write_effective_config(out, effective_config(cfg, "eval"))
    write_metrics_json(out / "metrics.json", report)
    write_per_class_csv(out / "per_class.csv", report)
    plot_confusion(out / "confusion.png", report)
    _print_report(report)
    print(f"wrote {out}")
    return 0


# row name -> (model wiring overrides, zero swap mass)
ABLATION_ROWS = (
    ("full", {}, False),
    ("-self-attention", {"override_joint": False}, False),
    ("-cross-attention", {"override_attention": "none"}, False),
    ("-cross+co", {"override_attention": "co"}, False),
    ("-cross+self", {"override_attention": "self"}, False),
    ("-dropout", {"dropout": 0.0}, False),
    ("-SSE", {}, True),
)


def cmd_ablate(args) -> int:
    cfg = make_config(args)
    if is_dual(cfg.variant):
        raise ConfigError("component removal rows are defined for single-head variants")
    out = _out_dir(args, "ablate")
    echo = effective_config(cfg, "ablate")
    write_effective_config(out, echo)
    corpus = load_or_generate(cfg)
    splits = build_splits(cfg, corpus)
    rows = []
    start = time.perf_counter()
    for name, overrides, zero_swap in ABLATION_ROWS:
        model_kwargs = dict(overrides)
        dropout = model_kwargs.pop("dropout", cfg.dropout)
        model = model_for_corpus(
            splits.train,
            splits.task.classes,
            variant=cfg.variant,
            k=cfg.k,
            hidden=cfg.hidden,
            fuse_mode=cfg.fuse_mode,
            dropout=dropout,
            seed=cfg.seed,
            image_feat=cfg.image_feat,
            text_feat=cfg.text_feat,
            vocab=cfg.vocab,
            **model_kwargs,
        )
        model, report, _ = train(train_config_from(cfg, zero_swap_mass=zero_swap), splits, model)
        rows.append({
            "name": name,
            "accuracy": report.accuracy,
            "macro_f1": report.macro_f1,
            "weighted_f1": report.weighted_f1,
        })
        _print_report(report, prefix=f"{name}: ")
    wall = time.perf_counter() - start
    write_ablation_csv(out / "ablation.csv", rows)
    plot_ablation(out / "ablation.png", rows)
    write_record(out / "record.json", ExperimentRecord(
        config=echo, metrics={"rows": rows}, history=[], wall_clock_sec=wall,
    ))
    print(f"wrote {out}")
    return 0


def cmd_sse_table(args) -> int:
    cfg = make_config(args)
    if args.modality not in ("image", "text"):
        raise ConfigError(f"modality must be image or text, got {args.modality!r}")
    out = _out_dir(args, "sse-table")
    write_effective_config(out, effective_config(cfg, "sse-table"))
    if cfg.data:
        corpus = load_dataset(cfg.data)
    elif args.allow_synth:
        corpus = load_or_generate(cfg)
    else:
        corpus = []
    graph = build_graph(
        [s.label_image for s in corpus],
        [s.label_text for s in corpus],
        ids=[s.id for s in corpus],
    )
    params = SSEParams(
        getattr(cfg, f"sse_p0_{args.modality}"),
        getattr(cfg, f"sse_rho_{args.modality}"),
    )
    path = out / f"sse_table_{args.modality}.csv"
    write_table_csv(path, graph, params, args.modality)
    print(f"wrote {path} ({graph.n} nodes)")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = make_config(args)
    out = _out_dir(args, "gradcheck")
    write_effective_config(out, effective_config(cfg, "gradcheck"))
    classes = [f"class_{i:02d}" for i in range(cfg.synth_classes)]
    model = build_model(
        classes,
        cfg.variant,
        d_image=cfg.synth_d_image,
        d_text=cfg.synth_d_text,
        k=cfg.k,
        hidden=cfg.hidden,
        fuse_mode=cfg.fuse_mode,
        dropout=cfg.dropout,
        seed=cfg.seed,
    )
    rng = Rng(cfg.seed).derive("gradcheck")
    f_vec = rng.normal(0.0, 1.0, cfg.synth_d_image)
    e_vec = rng.normal(0.0, 1.0, cfg.synth_d_text)
    label = 0

    label_txt = min(1, len(classes) - 1)

    def loss_only():
        out_fwd, _ = model.forward(f_vec, e_vec)
        if model.dual:
            loss, _ = dual_loss(out_fwd[0], out_fwd[1], label, label_txt)
        else:
            loss, _ = softmax_cross_entropy(out_fwd, label)
        return loss

    def backprop():
        out_fwd, back = model.forward(f_vec, e_vec)
        if model.dual:
            loss, dloss = dual_loss(out_fwd[0], out_fwd[1], label, label_txt)
            back(*dloss(1.0))
        else:
            loss, dloss = softmax_cross_entropy(out_fwd, label)
            back(dloss(1.0))
        return loss

    errors = gradient_check(loss_only, backprop, model.parameters())
    with open(out / "gradcheck.json", "w", encoding="utf-8") as fh:
        json.dump(errors, fh, sort_keys=True, indent=2)
        fh.write("\n")
    worst_name = max(errors, key=errors.get)
    worst = errors[worst_name]
    for name in sorted(errors):
        print(f"{name}: {errors[name]:.3e}")
    if worst > args.tol:
        print(f"FAIL: worst parameter {worst_name} relative error {worst:.3e} > {args.tol:g}",
              file=sys.stderr)
        return 4
    print(f"OK: worst parameter {worst_name} relative error {worst:.3e} <= {args.tol:g}")
    return 0


def cmd_gen_synth(args) -> int:
    cfg = make_config(args)
    out_file = Path(args.out) if args.out else Path("runs") / "gen-synth" / "corpus.jsonl"
    out_file.parent.mkdir(parents=True, exist_ok=True)
    corpus = generate_corpus(_synth_config(cfg))
    save_dataset(out_file, corpus)
    with open(str(out_file) + ".config.json", "w", encoding="utf-8") as fh:
        json.dump(effective_config(cfg, "gen-synth"), fh, sort_keys=True, indent=2)
        fh.write("\n")
    inconsistent = sum(1 for s in corpus if not s.consistent)
    print(f"wrote {out_file}: {len(corpus)} samples, {inconsistent} inconsistent")
    return 0


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crisisfuse",
                                     description="multimodal crisis post classifier")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write run artifacts")
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on its protocol's test split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", default=None, help="override the dataset path")
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_abl = sub.add_parser("ablate", help="train the component-removal grid")
    _add_config_flags(p_abl)
    p_abl.set_defaults(func=cmd_ablate)

    p_sse = sub.add_parser("sse-table", help="dump a swap transition table")
    _add_config_flags(p_sse)
    p_sse.add_argument("--modality", default="image")
    p_sse.add_argument("--allow-synth", action="store_true",
                       help="build the table over a synthetic corpus when no data is given")
    p_sse.set_defaults(func=cmd_sse_table)

    p_gc = sub.add_parser("gradcheck", help="finite-difference audit of the backward pass")
    _add_config_flags(p_gc)
    p_gc.add_argument("--tol", type=float, default=1e-4)
    p_gc.set_defaults(func=cmd_gradcheck)

    p_gen = sub.add_parser("gen-synth", help="write a synthetic paired corpus")
    _add_config_flags(p_gen)
    p_gen.set_defaults(func=cmd_gen_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, ProtocolError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def entrypoint():
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
