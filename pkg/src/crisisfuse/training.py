"""Model assembly, the SGD loop, evaluation, and swap-parameter tuning.

A Model bundles the fusion network with optional toy raw-input encoders
and a class list, so the trainer can stay generic over input mode
(precomputed feature vectors versus raw image/text) and over the
single-head and dual-head architectures.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .data import Sample, Splits, carve_holdout
from .encoders import (
    ImageEncoderParams,
    TextEncoderParams,
    encode_image_toy,
    encode_text_toy,
    init_image_encoder,
    init_text_encoder,
)
from .fusion import (
    FusionConfig,
    FusionParams,
    fuse_forward,
    fusion_config_from_dict,
    fusion_config_to_dict,
    init_fusion_params,
    load_checkpoint,
    restore_params,
    save_checkpoint,
)
from .kernel import Rng, sgd_step, softmax_cross_entropy
from .metrics import MetricsReport, compute_metrics
from .multilabel import DualParams, dual_forward, dual_loss, init_dual_params
from .sse import SSEParams, build_graph, transition_pair

VARIANTS = (
    "full",
    "feature_fusion",
    "variant1",
    "variant2",
    "variant3",
    "dual_cross",
    "dual_self",
    "dual_self_cross",
)

RHO_RANGE = (10.0, 20000.0)


class TrainingDivergedError(Exception):
    """Loss went non-finite. Carries the epoch index where it happened."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


@dataclass
class TrainConfig:
    lr: float = 2e-3
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 3
    lr_decay: float = 10.0
    max_decays: int = 2
    seed: int = 0
    sse_image: SSEParams | None = None
    sse_text: SSEParams | None = None

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("lr, batch_size and max_epochs must be positive")
        if self.patience < 1 or self.lr_decay <= 1 or self.max_decays < 0:
            raise ValueError("bad schedule: need patience >= 1, lr_decay > 1, max_decays >= 0")


def is_dual(variant: str) -> bool:
    return variant.startswith("dual_")


def fusion_config_for_variant(
    variant: str,
    d_image: int,
    d_text: int,
    num_classes: int,
    k: int = 100,
    hidden: int | None = None,
    fuse_mode: str = "concat",
    dropout: float = 0.5,
) -> FusionConfig:
    """Translate an experiment variant name into network wiring."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    attention = {
        "full": "cross",
        "feature_fusion": "none",
        "variant1": "co",
        "variant2": "cross",
        "variant3": "self",
        "dual_cross": "cross",
        "dual_self": "cross",
        "dual_self_cross": "cross",
    }[variant]
    joint = variant in ("full", "variant1", "variant3")
    return FusionConfig(
        d_image=d_image,
        d_text=d_text,
        num_classes=num_classes,
        k=k,
        hidden=hidden,
        attention_mode=attention,
        fuse_mode=fuse_mode,
        self_attention_on_joint=joint,
        dropout_rate=dropout,
    )


class Model:
    """Fusion network plus optional raw-input encoders and a class list."""

    def __init__(
        self,
        classes,
        variant: str,
        cfg: FusionConfig,
        params,
        image_encoder: ImageEncoderParams | None = None,
        text_encoder: TextEncoderParams | None = None,
    ):
        self.classes = tuple(classes)
        self.variant = variant
        self.cfg = cfg
        self.params = params
        self.image_encoder = image_encoder
        self.text_encoder = text_encoder
        self._index = {c: i for i, c in enumerate(self.classes)}

    @property
    def dual(self) -> bool:
        return is_dual(self.variant)

    @property
    def dual_mode(self) -> str:
        return self.variant.removeprefix("dual_")

    def class_index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ValueError(f"label {label!r} is not one of this model's classes") from None

    def parameters(self):
        out = list(self.params.all())
        if self.image_encoder is not None:
            out += self.image_encoder.all()
        if self.text_encoder is not None:
            out += self.text_encoder.all()
        return out

    def featurize_image(self, sample: Sample):
        """Return (feature, backward-or-None) for the image side."""
        if self.image_encoder is not None:
            if sample.image is None:
                raise ValueError(f"sample {sample.id!r} has no raw image for this model")
            return encode_image_toy(sample.image, self.image_encoder)
        if sample.image_vec is None:
            raise ValueError(f"sample {sample.id!r} has no image feature vector")
        return sample.image_vec, None

    def featurize_text(self, sample: Sample):
        if self.text_encoder is not None:
            if sample.text is None:
                raise ValueError(f"sample {sample.id!r} has no raw text for this model")
            return encode_text_toy(sample.text, self.text_encoder)
        if sample.text_vec is None:
            raise ValueError(f"sample {sample.id!r} has no text feature vector")
        return sample.text_vec, None

    def forward(self, f, e, rng: Rng | None = None, training: bool = False):
        if self.dual:
            return dual_forward(f, e, self.params, self.cfg, self.dual_mode, rng, training)
        return fuse_forward(f, e, self.params, self.cfg, rng, training)

    def predict_sample(self, sample: Sample):
        """Predicted label; for dual-head models, (image, text) labels."""
        f, _ = self.featurize_image(sample)
        e, _ = self.featurize_text(sample)
        out, _ = self.forward(f, e)
        if self.dual:
            li, lt = out
            return self.classes[int(np.argmax(li))], self.classes[int(np.argmax(lt))]
        return self.classes[int(np.argmax(out))]


def build_model(
    classes,
    variant: str = "full",
    d_image: int | None = None,
    d_text: int | None = None,
    k: int = 100,
    hidden: int | None = None,
    fuse_mode: str = "concat",
    dropout: float = 0.5,
    seed: int = 0,
    image_in_dim: int | None = None,
    image_feat: int = 32,
    vocab: int = 256,
    text_feat: int = 32,
    override_attention: str | None = None,
    override_joint: bool | None = None,
) -> Model:
    """Assemble a model.

    Vector mode: pass d_image/d_text (the stored feature dims). Raw
    mode: pass image_in_dim (flattened pixel count); toy encoders then
    map pixels to image_feat dims and hashed tokens to text_feat dims.
    The override_* knobs re-wire a single aspect of the variant, which
    is what component-removal studies need.
    """
    rng = Rng(seed).derive("init")
    image_encoder = text_encoder = None
    if image_in_dim is not None:
        image_encoder = init_image_encoder(image_in_dim, image_feat, rng)
        text_encoder = init_text_encoder(text_feat, rng, vocab=vocab)
        d_image, d_text = image_feat, text_feat
    if d_image is None or d_text is None:
        raise ValueError("need d_image/d_text for vector inputs, or image_in_dim for raw")
    cfg = fusion_config_for_variant(
        variant, d_image, d_text, len(tuple(classes)), k, hidden, fuse_mode, dropout
    )
    if override_attention is not None or override_joint is not None:
        if is_dual(variant):
            raise ValueError("wiring overrides apply to single-head variants only")
        cfg = dataclasses.replace(
            cfg,
            attention_mode=override_attention if override_attention is not None else cfg.attention_mode,
            self_attention_on_joint=override_joint if override_joint is not None else cfg.self_attention_on_joint,
        )
    if is_dual(variant):
        params = init_dual_params(cfg, variant.removeprefix("dual_"), rng)
    else:
        params = init_fusion_params(cfg, rng)
    return Model(classes, variant, cfg, params, image_encoder, text_encoder)


def model_for_corpus(samples, classes, variant="full", **kwargs) -> Model:
    """Build a model matching the corpus input mode (vectors or raw)."""
    if not samples:
        raise ValueError("empty corpus")
    first = samples[0]
    if first.image_vec is not None and first.text_vec is not None:
        return build_model(
            classes,
            variant,
            d_image=int(first.image_vec.shape[0]),
            d_text=int(first.text_vec.shape[0]),
            **kwargs,
        )
    if first.image is not None and first.text is not None:
        return build_model(
            classes, variant, image_in_dim=int(first.image.size), **kwargs
        )
    raise ValueError(f"sample {first.id!r} has neither a full vector nor a full raw pair")


# ---------------------------------------------------------------------------
# loss plumbing
# ---------------------------------------------------------------------------

def _sample_loss(model: Model, img_src: Sample, txt_src: Sample, label: str,
                 rng: Rng | None, training: bool, scale: float | None):
    """Loss for one sample; backprops into parameters when scale given."""
    f, back_f = model.featurize_image(img_src)
    e, back_e = model.featurize_text(txt_src)
    out, back = model.forward(f, e, rng=rng, training=training)
    if model.dual:
        li, lt = out
        yi = model.class_index(img_src.label_image)
        yt = model.class_index(txt_src.label_text)
        loss, dloss = dual_loss(li, lt, yi, yt)
        if scale is not None:
            gi, gt = dloss(scale)
            df, de = back(gi, gt)
            if back_f is not None:
                back_f(df)
            if back_e is not None:
                back_e(de)
    else:
        loss, dloss = softmax_cross_entropy(out, model.class_index(label))
        if scale is not None:
            df, de = back(dloss(scale))
            if back_f is not None:
                back_f(df)
            if back_e is not None:
                back_e(de)
    return loss


def mean_loss(model: Model, samples) -> float:
    """Average evaluation-mode loss (no dropout, no swaps, no grads)."""
    if not samples:
        raise ValueError("cannot average a loss over zero samples")
    total = 0.0
    for s in samples:
        total += _sample_loss(model, s, s, s.label_image, None, False, None)
    return total / len(samples)


def train(config: TrainConfig, splits: Splits, model: Model):
    """Mini-batch SGD with plateau-driven learning-rate decay.

    Returns (model, MetricsReport, history). The model comes back at
    its best-dev-loss parameters; when there is no dev split, the
    schedule and checkpointing fall back to the train epoch loss.
    """
    train_set = splits.train
    if not train_set:
        raise ValueError("training split is empty")
    sse_on = config.sse_image is not None or config.sse_text is not None
    if splits.forced_ids and config.sse_text is None:
        raise ValueError(
            "this split flags samples for forced text swaps; text-side swap parameters are required"
        )
    graph = None
    if sse_on:
        graph = build_graph(
            [s.label_image for s in train_set],
            [s.label_text for s in train_set],
            ids=[s.id for s in train_set],
        )

    root = Rng(config.seed)
    dropout_rng = root.derive("dropout")
    sse_rng = root.derive("sse")

    params = model.parameters()
    lr = config.lr
    best_loss = np.inf
    best_values = [p.value.copy() for p in params]
    bad_epochs = 0
    decays = 0
    history: list[dict] = []
    n = len(train_set)

    for epoch in range(config.max_epochs):
        order = root.derive("shuffle", str(epoch)).permutation(n)
        epoch_total = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            scale = 1.0 / len(batch)
            for i in batch:
                i = int(i)
                anchor = train_set[i]
                if graph is not None:
                    j, kk, label = transition_pair(
                        i, graph, config.sse_image, config.sse_text, sse_rng,
                        force_text=anchor.id in splits.forced_ids,
                    )
                    img_src, txt_src = train_set[j], train_set[kk]
                else:
                    img_src = txt_src = anchor
                    label = anchor.label_image
                loss = _sample_loss(model, img_src, txt_src, label, dropout_rng, True, scale)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(epoch)
                epoch_total += loss
            sgd_step(params, lr)

        train_loss = epoch_total / n
        dev_loss = mean_loss(model, splits.dev) if splits.dev else train_loss
        if not np.isfinite(dev_loss):
            raise TrainingDivergedError(epoch)
        history.append({
            "epoch": epoch,
            "train_loss": float(train_loss),
            "dev_loss": float(dev_loss),
            "lr": float(lr),
        })
        if dev_loss < best_loss:
            best_loss = dev_loss
            best_values = [p.value.copy() for p in params]
            bad_epochs = 0
        else:
            bad_epochs += 1
        if bad_epochs >= config.patience:
            if decays >= config.max_decays:
                break
            decays += 1
            lr /= config.lr_decay
            bad_epochs = 0

    for p, v in zip(params, best_values):
        p.value = v.copy()

    eval_set = splits.test or splits.dev or splits.train
    report = evaluate(model, eval_set)
    return model, report, history


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate(model: Model, samples) -> MetricsReport:
    """Score a sample list.

    Single-head models score predictions against the image-side label
    (identical to the text label on consistency-filtered splits). For
    dual-head models the main report is the image head and the text
    head's numbers ride along under extra["text_head"].
    """
    if not samples:
        raise ValueError("cannot evaluate on zero samples")
    if model.dual:
        img_report, txt_report = evaluate_dual(model, samples)
        img_report.extra["head"] = "image"
        img_report.extra["text_head"] = txt_report.to_dict()
        return img_report
    gold = [s.label_image for s in samples]
    pred = [model.predict_sample(s) for s in samples]
    return compute_metrics(gold, pred, model.classes)


def evaluate_dual(model: Model, samples):
    """Per-head reports (image head, text head) against per-side labels."""
    if not model.dual:
        raise ValueError("evaluate_dual needs a dual-head model")
    pred_img, pred_txt = [], []
    for s in samples:
        pi, pt = model.predict_sample(s)
        pred_img.append(pi)
        pred_txt.append(pt)
    gold_img = [s.label_image for s in samples]
    gold_txt = [s.label_text for s in samples]
    return (
        compute_metrics(gold_img, pred_img, model.classes),
        compute_metrics(gold_txt, pred_txt, model.classes),
    )


# ---------------------------------------------------------------------------
# swap-parameter tuning
# ---------------------------------------------------------------------------

@dataclass
class TuneResult:
    best: dict
    rows: list[dict]


def validate_grid(grid):
    if not grid:
        raise ValueError("empty tuning grid")
    for pos, entry in enumerate(grid):
        for side in ("image", "text"):
            p = entry.get(side)
            if p is None:
                continue
            if not RHO_RANGE[0] <= p.rho <= RHO_RANGE[1]:
                raise ValueError(
                    f"grid entry {pos}: rho {p.rho} outside [{RHO_RANGE[0]:g}, {RHO_RANGE[1]:g}]"
                )
            # p0 bounds are enforced by SSEParams itself; re-check anyway
            if not 0.0 <= p.p0 <= 1.0:
                raise ValueError(f"grid entry {pos}: p0 {p.p0} outside [0, 1]")


TUNE_PROTOCOLS = ("dev", "fifteen_percent")


def tune(config: TrainConfig, splits: Splits, model_factory, grid,
         protocol: str = "dev") -> TuneResult:
    """Grid-search swap parameters; pick by held-out accuracy.

    protocol "dev" scores on the dev split; "fifteen_percent" carves a
    15% holdout out of the train split (kept disjoint from the portion
    actually trained on). Ties keep the earliest grid entry.
    """
    validate_grid(grid)
    if protocol not in TUNE_PROTOCOLS:
        raise ValueError(f"unknown tuning protocol {protocol!r}")
    if protocol == "dev":
        if not splits.dev:
            raise ValueError("dev protocol needs a non-empty dev split")
        train_part, eval_part = splits.train, splits.dev
    else:
        train_part, eval_part = carve_holdout(splits.train, 0.15, config.seed)

    rows = []
    best_row = None
    best_acc = -1.0
    for entry in grid:
        cfg = dataclasses.replace(
            config, sse_image=entry.get("image"), sse_text=entry.get("text")
        )
        model = model_factory()
        sub = Splits(
            train=train_part,
            dev=eval_part,
            test=[],
            forced_ids=splits.forced_ids,
            task=splits.task,
        )
        model, _, _ = train(cfg, sub, model)
        acc = evaluate(model, eval_part).accuracy
        row = {"image": entry.get("image"), "text": entry.get("text"), "accuracy": float(acc)}
        rows.append(row)
        if acc > best_acc:
            best_acc = acc
            best_row = row
    return TuneResult(best=best_row, rows=rows)


# ---------------------------------------------------------------------------
# model checkpoints
# ---------------------------------------------------------------------------

def save_model(path, model: Model, extra_meta: dict | None = None):
    meta = {
        "classes": list(model.classes),
        "variant": model.variant,
        "fusion": fusion_config_to_dict(model.cfg),
        "encoders": None,
    }
    if model.image_encoder is not None:
        meta["encoders"] = {
            "image_in_dim": int(model.image_encoder.w.value.shape[0]),
            "image_feat": int(model.image_encoder.w.value.shape[1]),
            "vocab": int(model.text_encoder.vocab),
            "text_feat": int(model.text_encoder.w.value.shape[1]),
        }
    if extra_meta:
        meta["extra"] = extra_meta
    save_checkpoint(path, model.parameters(), meta)


def load_model(path) -> tuple[Model, dict]:
    meta, tensors = load_checkpoint(path)
    cfg = fusion_config_from_dict(meta["fusion"])
    variant = meta["variant"]
    rng = Rng(0).derive("init")
    image_encoder = text_encoder = None
    enc = meta.get("encoders")
    if enc:
        image_encoder = init_image_encoder(enc["image_in_dim"], enc["image_feat"], rng)
        text_encoder = init_text_encoder(enc["text_feat"], rng, vocab=enc["vocab"])
    if is_dual(variant):
        params = init_dual_params(cfg, variant.removeprefix("dual_"), rng)
    else:
        params = init_fusion_params(cfg, rng)
    model = Model(meta["classes"], variant, cfg, params, image_encoder, text_encoder)
    restore_params(model.parameters(), tensors)
    return model, meta
