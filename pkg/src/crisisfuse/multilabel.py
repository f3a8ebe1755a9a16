"""Dual-head variants for per-modality labels.

When the image and the text of a post are annotated separately, one
classifier head per modality is trained and the two cross-entropy losses
are summed with equal weight. Three ways to build the head inputs:

    cross       both heads read the gated joint representation
    self        each head reads its own projection scaled by a gate
                computed from its own raw features
    self_cross  each head reads a convex mix of the two projections; the
                gate gives its own modality weight gamma and the other
                modality weight 1 - gamma
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fusion import FusionConfig, FusionParams, _MASK_FNS, project
from .kernel import (
    Parameter,
    Rng,
    dense,
    dropout,
    make_param,
    relu,
    self_attention,
    sigmoid,
    softmax_cross_entropy,
)

DUAL_VARIANTS = ("cross", "self", "self_cross")


@dataclass
class DualParams:
    proj_img_w: Parameter
    proj_img_b: Parameter
    proj_txt_w: Parameter
    proj_txt_b: Parameter
    # gates: either the cross/co mask pair (variant "cross") or the
    # own-modality gamma pair (variants "self"/"self_cross")
    mask_img_w: Parameter | None
    mask_img_b: Parameter | None
    mask_txt_w: Parameter | None
    mask_txt_b: Parameter | None
    joint_w: Parameter | None
    joint_b: Parameter | None
    head_img_fc1_w: Parameter
    head_img_fc1_b: Parameter
    head_img_fc2_w: Parameter
    head_img_fc2_b: Parameter
    head_txt_fc1_w: Parameter
    head_txt_fc1_b: Parameter
    head_txt_fc2_w: Parameter
    head_txt_fc2_b: Parameter

    def all(self) -> list[Parameter]:
        out = []
        for f in (
            self.proj_img_w, self.proj_img_b, self.proj_txt_w, self.proj_txt_b,
            self.mask_img_w, self.mask_img_b, self.mask_txt_w, self.mask_txt_b,
            self.joint_w, self.joint_b,
            self.head_img_fc1_w, self.head_img_fc1_b, self.head_img_fc2_w, self.head_img_fc2_b,
            self.head_txt_fc1_w, self.head_txt_fc1_b, self.head_txt_fc2_w, self.head_txt_fc2_b,
        ):
            if f is not None:
                out.append(f)
        return out


def init_dual_params(cfg: FusionConfig, variant: str, rng: Rng) -> DualParams:
    if variant not in DUAL_VARIANTS:
        raise ValueError(f"unknown dual variant {variant!r}")
    k = cfg.k
    if variant == "cross":
        d_mi, d_mt = cfg.mask_input_dims() if cfg.attention_mode != "none" else (None, None)
        if d_mi is not None:
            gates = dict(
                mask_img_w=make_param("mask.img.w", (d_mi, k), rng),
                mask_img_b=make_param("mask.img.b", (k,), rng, kind="zeros"),
                mask_txt_w=make_param("mask.txt.w", (d_mt, k), rng),
                mask_txt_b=make_param("mask.txt.b", (k,), rng, kind="zeros"),
            )
        else:
            gates = dict(mask_img_w=None, mask_img_b=None, mask_txt_w=None, mask_txt_b=None)
        jd = cfg.joint_dim
        if cfg.self_attention_on_joint:
            joint = dict(
                joint_w=make_param("joint_attn.w", (jd, jd), rng),
                joint_b=make_param("joint_attn.b", (jd,), rng, kind="zeros"),
            )
        else:
            joint = dict(joint_w=None, joint_b=None)
        head_in = jd
    else:
        gates = dict(
            mask_img_w=make_param("gamma.img.w", (cfg.d_image, k), rng),
            mask_img_b=make_param("gamma.img.b", (k,), rng, kind="zeros"),
            mask_txt_w=make_param("gamma.txt.w", (cfg.d_text, k), rng),
            mask_txt_b=make_param("gamma.txt.b", (k,), rng, kind="zeros"),
        )
        joint = dict(joint_w=None, joint_b=None)
        head_in = k
    hh = cfg.head_hidden
    return DualParams(
        proj_img_w=make_param("proj.img.w", (cfg.d_image, k), rng),
        proj_img_b=make_param("proj.img.b", (k,), rng, kind="zeros"),
        proj_txt_w=make_param("proj.txt.w", (cfg.d_text, k), rng),
        proj_txt_b=make_param("proj.txt.b", (k,), rng, kind="zeros"),
        **gates,
        **joint,
        head_img_fc1_w=make_param("head_img.fc1.w", (head_in, hh), rng),
        head_img_fc1_b=make_param("head_img.fc1.b", (hh,), rng, kind="zeros"),
        head_img_fc2_w=make_param("head_img.fc2.w", (hh, cfg.num_classes), rng),
        head_img_fc2_b=make_param("head_img.fc2.b", (cfg.num_classes,), rng, kind="zeros"),
        head_txt_fc1_w=make_param("head_txt.fc1.w", (head_in, hh), rng),
        head_txt_fc1_b=make_param("head_txt.fc1.b", (hh,), rng, kind="zeros"),
        head_txt_fc2_w=make_param("head_txt.fc2.w", (hh, cfg.num_classes), rng),
        head_txt_fc2_b=make_param("head_txt.fc2.b", (cfg.num_classes,), rng, kind="zeros"),
    )


def self_masks(f: np.ndarray, e: np.ndarray, params: DualParams):
    """Gates computed from each modality's own raw features."""
    gi_pre, back_gi = dense(f, params.mask_img_w, params.mask_img_b)
    gamma_img, back_si = sigmoid(gi_pre)
    gt_pre, back_gt = dense(e, params.mask_txt_w, params.mask_txt_b)
    gamma_txt, back_st = sigmoid(gt_pre)

    def backward(g_gi, g_gt):
        df = back_gi(back_si(g_gi))
        de = back_gt(back_st(g_gt))
        return df, de

    return gamma_img, gamma_txt, backward


def inverse_masks(gamma: np.ndarray) -> np.ndarray:
    """Complementary gate 1 - gamma."""
    return 1.0 - np.asarray(gamma, dtype=np.float64)


def self_cross_features(f_proj, e_proj, gamma_img, gamma_txt):
    """Convex per-coordinate mixes of the two projections.

    image side: gamma_img * f_proj + (1 - gamma_img) * e_proj
    text side:  gamma_txt * e_proj + (1 - gamma_txt) * f_proj

    Returns (f_mix, e_mix, backward); backward(g_f, g_e) gives gradients
    w.r.t. (f_proj, e_proj, gamma_img, gamma_txt).
    """
    inv_img = inverse_masks(gamma_img)
    inv_txt = inverse_masks(gamma_txt)
    f_mix = gamma_img * f_proj + inv_img * e_proj
    e_mix = gamma_txt * e_proj + inv_txt * f_proj

    def backward(g_f, g_e):
        d_fproj = g_f * gamma_img + g_e * inv_txt
        d_eproj = g_f * inv_img + g_e * gamma_txt
        d_gimg = g_f * (f_proj - e_proj)
        d_gtxt = g_e * (e_proj - f_proj)
        return d_fproj, d_eproj, d_gimg, d_gtxt

    return f_mix, e_mix, backward


def _head(x, w1, b1, w2, b2, rate, rng, training):
    dz, back_drop = dropout(x, rate, rng, training)
    pre, back_fc1 = dense(dz, w1, b1)
    h, back_r = relu(pre)
    logits, back_fc2 = dense(h, w2, b2)

    def backward(g):
        return back_drop(back_fc1(back_r(back_fc2(g))))

    return logits, backward


def dual_forward(
    f: np.ndarray,
    e: np.ndarray,
    params: DualParams,
    cfg: FusionConfig,
    variant: str,
    rng: Rng | None = None,
    training: bool = False,
):
    """Two-head forward. Returns ((logits_img, logits_txt), backward);
    backward(g_img, g_txt) accumulates all gradients and returns (df, de).
    """
    if variant not in DUAL_VARIANTS:
        raise ValueError(f"unknown dual variant {variant!r}")
    f = np.asarray(f, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    f_proj, e_proj, back_proj = project(f, e, params)
    rate = cfg.dropout_rate

    if variant == "cross":
        if cfg.attention_mode == "none":
            fg, eg = f_proj, e_proj
            mask_img = mask_txt = back_masks = None
        else:
            mask_img, mask_txt, back_masks = _MASK_FNS[cfg.attention_mode](f, e, params)
            fg = mask_img * f_proj
            eg = mask_txt * e_proj
        joint = np.concatenate([fg, eg]) if cfg.fuse_mode == "concat" else fg + eg
        if cfg.self_attention_on_joint:
            jout, back_joint = self_attention(joint, params.joint_w, params.joint_b)
        else:
            jout, back_joint = joint, None
        li, back_hi = _head(
            jout, params.head_img_fc1_w, params.head_img_fc1_b,
            params.head_img_fc2_w, params.head_img_fc2_b, rate, rng, training)
        lt, back_ht = _head(
            jout, params.head_txt_fc1_w, params.head_txt_fc1_b,
            params.head_txt_fc2_w, params.head_txt_fc2_b, rate, rng, training)

        k = cfg.k

        def backward(g_img, g_txt):
            g = back_hi(g_img) + back_ht(g_txt)
            if back_joint is not None:
                g = back_joint(g)
            if cfg.fuse_mode == "concat":
                g_fg, g_eg = g[:k], g[k:]
            else:
                g_fg, g_eg = g, g
            if mask_img is None:
                return back_proj(g_fg, g_eg)
            g_mi = g_fg * f_proj
            g_fp = g_fg * mask_img
            g_mt = g_eg * e_proj
            g_ep = g_eg * mask_txt
            df, de = back_proj(g_fp, g_ep)
            df2, de2 = back_masks(g_mi, g_mt)
            return df + df2, de + de2

        return (li, lt), backward

    gamma_img, gamma_txt, back_gammas = self_masks(f, e, params)

    if variant == "self":
        xi = gamma_img * f_proj
        xt = gamma_txt * e_proj
        li, back_hi = _head(
            xi, params.head_img_fc1_w, params.head_img_fc1_b,
            params.head_img_fc2_w, params.head_img_fc2_b, rate, rng, training)
        lt, back_ht = _head(
            xt, params.head_txt_fc1_w, params.head_txt_fc1_b,
            params.head_txt_fc2_w, params.head_txt_fc2_b, rate, rng, training)

        def backward(g_img, g_txt):
            g_xi = back_hi(g_img)
            g_xt = back_ht(g_txt)
            g_fp = g_xi * gamma_img
            g_ep = g_xt * gamma_txt
            g_gi = g_xi * f_proj
            g_gt = g_xt * e_proj
            df, de = back_proj(g_fp, g_ep)
            df2, de2 = back_gammas(g_gi, g_gt)
            return df + df2, de + de2

        return (li, lt), backward

    # self_cross
    f_mix, e_mix, back_mix = self_cross_features(f_proj, e_proj, gamma_img, gamma_txt)
    li, back_hi = _head(
        f_mix, params.head_img_fc1_w, params.head_img_fc1_b,
        params.head_img_fc2_w, params.head_img_fc2_b, rate, rng, training)
    lt, back_ht = _head(
        e_mix, params.head_txt_fc1_w, params.head_txt_fc1_b,
        params.head_txt_fc2_w, params.head_txt_fc2_b, rate, rng, training)

    def backward(g_img, g_txt):
        g_fm = back_hi(g_img)
        g_em = back_ht(g_txt)
        g_fp, g_ep, g_gi, g_gt = back_mix(g_fm, g_em)
        df, de = back_proj(g_fp, g_ep)
        df2, de2 = back_gammas(g_gi, g_gt)
        return df + df2, de + de2

    return (li, lt), backward


def dual_loss(logits_img, logits_txt, label_img: int, label_txt: int):
    """Sum of the two head losses, equally weighted.

    Returns (loss, backward) with backward(scale) -> (g_img, g_txt).
    """
    li, back_i = softmax_cross_entropy(logits_img, label_img)
    lt, back_t = softmax_cross_entropy(logits_txt, label_txt)

    def backward(scale=1.0):
        return back_i(scale), back_t(scale)

    return li + lt, backward
