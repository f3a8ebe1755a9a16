"""Gated two-modality fusion network.

Both modality features are projected to a shared width, then each
projection is scaled elementwise by a sigmoid gate. The defining move of
the cross mode is where the gate comes from: the gate applied to the
IMAGE projection is computed from the raw TEXT features alone, and vice
versa, so each modality decides how much of the other to let through. A
modality that carries a clear signal can squeeze the other's gate shut
and keep misleading content out of the joint representation.

Gate variants:
    cross  gate(image) = sigma(W' e + b'), gate(text) = sigma(W'' f + b'')
    co     both gates read the concatenation [f | e]
    self   each modality gates itself
    none   no gating (plain feature fusion baseline)

After gating, projections are concatenated (or added), optionally passed
through a joint self-gate, dropped out, and classified by a two-layer
head.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .kernel import Parameter, Rng, dense, dropout, make_param, relu, self_attention, sigmoid

ATTENTION_MODES = ("cross", "co", "self", "none")
FUSE_MODES = ("concat", "add")


@dataclass
class FusionConfig:
    d_image: int
    d_text: int
    num_classes: int
    k: int = 100
    hidden: int | None = None  # defaults to k
    attention_mode: str = "cross"
    fuse_mode: str = "concat"
    self_attention_on_joint: bool = True
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.attention_mode not in ATTENTION_MODES:
            raise ValueError(f"unknown attention_mode {self.attention_mode!r}")
        if self.fuse_mode not in FUSE_MODES:
            raise ValueError(f"unknown fuse_mode {self.fuse_mode!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        for name in ("d_image", "d_text", "num_classes", "k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def head_hidden(self) -> int:
        return self.hidden if self.hidden is not None else self.k

    @property
    def joint_dim(self) -> int:
        return 2 * self.k if self.fuse_mode == "concat" else self.k

    def mask_input_dims(self) -> tuple[int, int] | None:
        """(input dim of the image gate, input dim of the text gate)."""
        if self.attention_mode == "cross":
            return self.d_text, self.d_image
        if self.attention_mode == "co":
            both = self.d_image + self.d_text
            return both, both
        if self.attention_mode == "self":
            return self.d_image, self.d_text
        return None


@dataclass
class FusionParams:
    proj_img_w: Parameter
    proj_img_b: Parameter
    proj_txt_w: Parameter
    proj_txt_b: Parameter
    mask_img_w: Parameter | None
    mask_img_b: Parameter | None
    mask_txt_w: Parameter | None
    mask_txt_b: Parameter | None
    joint_w: Parameter | None
    joint_b: Parameter | None
    fc1_w: Parameter
    fc1_b: Parameter
    fc2_w: Parameter
    fc2_b: Parameter

    def all(self) -> list[Parameter]:
        out = []
        for f in (
            self.proj_img_w, self.proj_img_b, self.proj_txt_w, self.proj_txt_b,
            self.mask_img_w, self.mask_img_b, self.mask_txt_w, self.mask_txt_b,
            self.joint_w, self.joint_b,
            self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b,
        ):
            if f is not None:
                out.append(f)
        return out


def init_fusion_params(cfg: FusionConfig, rng: Rng) -> FusionParams:
    """Glorot-uniform weights, zero biases; each tensor's draw depends only
    on (seed, name), so configs that share a tensor share its init."""
    k = cfg.k
    mask_dims = cfg.mask_input_dims()
    if mask_dims is None:
        m = dict(mask_img_w=None, mask_img_b=None, mask_txt_w=None, mask_txt_b=None)
    else:
        d_mi, d_mt = mask_dims
        m = dict(
            mask_img_w=make_param("mask.img.w", (d_mi, k), rng),
            mask_img_b=make_param("mask.img.b", (k,), rng, kind="zeros"),
            mask_txt_w=make_param("mask.txt.w", (d_mt, k), rng),
            mask_txt_b=make_param("mask.txt.b", (k,), rng, kind="zeros"),
        )
    jd = cfg.joint_dim
    if cfg.self_attention_on_joint:
        j = dict(
            joint_w=make_param("joint_attn.w", (jd, jd), rng),
            joint_b=make_param("joint_attn.b", (jd,), rng, kind="zeros"),
        )
    else:
        j = dict(joint_w=None, joint_b=None)
    return FusionParams(
        proj_img_w=make_param("proj.img.w", (cfg.d_image, k), rng),
        proj_img_b=make_param("proj.img.b", (k,), rng, kind="zeros"),
        proj_txt_w=make_param("proj.txt.w", (cfg.d_text, k), rng),
        proj_txt_b=make_param("proj.txt.b", (k,), rng, kind="zeros"),
        **m,
        **j,
        fc1_w=make_param("head.fc1.w", (jd, cfg.head_hidden), rng),
        fc1_b=make_param("head.fc1.b", (cfg.head_hidden,), rng, kind="zeros"),
        fc2_w=make_param("head.fc2.w", (cfg.head_hidden, cfg.num_classes), rng),
        fc2_b=make_param("head.fc2.b", (cfg.num_classes,), rng, kind="zeros"),
    )


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def project(f: np.ndarray, e: np.ndarray, params: FusionParams):
    """ReLU projections of both modalities to the shared width.

    Returns (f_proj, e_proj, backward) with backward(g_f, g_e) -> (df, de).
    """
    pf, back_pf = dense(f, params.proj_img_w, params.proj_img_b)
    f_proj, back_rf = relu(pf)
    pe, back_pe = dense(e, params.proj_txt_w, params.proj_txt_b)
    e_proj, back_re = relu(pe)

    def backward(g_f, g_e):
        return back_pf(back_rf(g_f)), back_pe(back_re(g_e))

    return f_proj, e_proj, backward


def cross_attention_masks(f: np.ndarray, e: np.ndarray, params: FusionParams):
    """Each gate reads only the opposite modality's raw features.

    The image gate is a function of e alone and the text gate of f alone;
    perturbing an image never moves its own gate.
    """
    mi_pre, back_mi = dense(e, params.mask_img_w, params.mask_img_b)
    mask_img, back_si = sigmoid(mi_pre)
    mt_pre, back_mt = dense(f, params.mask_txt_w, params.mask_txt_b)
    mask_txt, back_st = sigmoid(mt_pre)

    def backward(g_mi, g_mt):
        de = back_mi(back_si(g_mi))
        df = back_mt(back_st(g_mt))
        return df, de

    return mask_img, mask_txt, backward


def co_attention_masks(f: np.ndarray, e: np.ndarray, params: FusionParams):
    """Both gates read the concatenation of the two raw feature vectors."""
    joint = np.concatenate([f, e])
    nf = f.shape[0]
    mi_pre, back_mi = dense(joint, params.mask_img_w, params.mask_img_b)
    mask_img, back_si = sigmoid(mi_pre)
    mt_pre, back_mt = dense(joint, params.mask_txt_w, params.mask_txt_b)
    mask_txt, back_st = sigmoid(mt_pre)

    def backward(g_mi, g_mt):
        gj = back_mi(back_si(g_mi)) + back_mt(back_st(g_mt))
        return gj[:nf], gj[nf:]

    return mask_img, mask_txt, backward


def self_attention_masks(f: np.ndarray, e: np.ndarray, params: FusionParams):
    """Each gate reads its own modality (ablation variant)."""
    mi_pre, back_mi = dense(f, params.mask_img_w, params.mask_img_b)
    mask_img, back_si = sigmoid(mi_pre)
    mt_pre, back_mt = dense(e, params.mask_txt_w, params.mask_txt_b)
    mask_txt, back_st = sigmoid(mt_pre)

    def backward(g_mi, g_mt):
        df = back_mi(back_si(g_mi))
        de = back_mt(back_st(g_mt))
        return df, de

    return mask_img, mask_txt, backward


_MASK_FNS = {
    "cross": cross_attention_masks,
    "co": co_attention_masks,
    "self": self_attention_masks,
}


def fuse_forward(
    f: np.ndarray,
    e: np.ndarray,
    params: FusionParams,
    cfg: FusionConfig,
    rng: Rng | None = None,
    training: bool = False,
):
    """Full fusion pipeline. Returns (logits, backward).

    backward(g_logits) accumulates into every parameter and returns
    (df, de), the gradients w.r.t. the raw modality features.
    """
    f = np.asarray(f, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    f_proj, e_proj, back_proj = project(f, e, params)

    if cfg.attention_mode == "none":
        fg, eg = f_proj, e_proj
        mask_img = mask_txt = back_masks = None
    else:
        mask_img, mask_txt, back_masks = _MASK_FNS[cfg.attention_mode](f, e, params)
        fg = mask_img * f_proj
        eg = mask_txt * e_proj

    if cfg.fuse_mode == "concat":
        joint = np.concatenate([fg, eg])
    else:
        joint = fg + eg

    if cfg.self_attention_on_joint:
        jout, back_joint = self_attention(joint, params.joint_w, params.joint_b)
    else:
        jout, back_joint = joint, None

    dz, back_drop = dropout(jout, cfg.dropout_rate, rng, training)
    h_pre, back_fc1 = dense(dz, params.fc1_w, params.fc1_b)
    h, back_hr = relu(h_pre)
    logits, back_fc2 = dense(h, params.fc2_w, params.fc2_b)

    k = cfg.k

    def backward(g_logits):
        g = back_fc1(back_hr(back_fc2(np.asarray(g_logits, dtype=np.float64))))
        g = back_drop(g)
        if back_joint is not None:
            g = back_joint(g)
        if cfg.fuse_mode == "concat":
            g_fg, g_eg = g[:k], g[k:]
        else:
            g_fg, g_eg = g, g
        if cfg.attention_mode == "none":
            df, de = back_proj(g_fg, g_eg)
        else:
            g_mask_img = g_fg * f_proj
            g_fproj = g_fg * mask_img
            g_mask_txt = g_eg * e_proj
            g_eproj = g_eg * mask_txt
            df, de = back_proj(g_fproj, g_eproj)
            df2, de2 = back_masks(g_mask_img, g_mask_txt)
            df = df + df2
            de = de + de2
        return df, de

    return logits, backward


def predict(logits: np.ndarray) -> int:
    """Argmax class index; ties go to the lowest index."""
    return int(np.argmax(logits))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "crisisfuse-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: list[Parameter], meta: dict | None = None):
    """Line-JSON parameter dump. Floats round-trip bit-exactly via repr."""
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION}
    if meta:
        header["meta"] = meta
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for p in params:
            row = {
                "name": p.name,
                "shape": list(p.value.shape),
                "data": [float(v) for v in p.value.reshape(-1)],
            }
            fh.write(json.dumps(row) + "\n")


def load_checkpoint(path):
    """Returns (meta dict, {name: ndarray})."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty checkpoint")
    header = json.loads(lines[0])
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    tensors = {}
    for ln in lines[1:]:
        row = json.loads(ln)
        tensors[row["name"]] = np.array(row["data"], dtype=np.float64).reshape(row["shape"])
    return header.get("meta", {}), tensors


def restore_params(params: list[Parameter], tensors: dict[str, np.ndarray]):
    """Copy checkpoint tensors into an existing parameter set by name."""
    for p in params:
        if p.name not in tensors:
            raise ValueError(f"checkpoint missing tensor {p.name!r}")
        t = tensors[p.name]
        if t.shape != p.value.shape:
            raise ValueError(
                f"checkpoint tensor {p.name!r} has shape {t.shape}, expected {p.value.shape}"
            )
        p.value = t.copy()
        p.grad = np.zeros_like(p.value)


def fusion_config_to_dict(cfg: FusionConfig) -> dict:
    return asdict(cfg)


def fusion_config_from_dict(d: dict) -> FusionConfig:
    return FusionConfig(**d)
