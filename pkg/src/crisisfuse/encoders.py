"""Input preprocessing and small trainable encoders.

Two input routes feed the fusion network: precomputed feature vectors
(e.g. CNN pools / sentence embeddings produced offline) loaded from
line-JSON, or raw inputs (pixel arrays, tweet text) pushed through toy
encoders that train end to end with the rest of the model.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from .kernel import Parameter, Rng, dense, make_param, relu

DEFAULT_TEXT_DIM = 756
DEFAULT_VOCAB = 2048
DEFAULT_RESIZE_SHORT = 228
DEFAULT_CROP = 224

_LINK_PREFIXES = ("http://", "https://", "www.")


@dataclass
class TextInput:
    raw: str
    tokens: list[str] = field(default_factory=list)

    @property
    def normalized(self) -> str:
        return " ".join(self.tokens)


@dataclass
class ImageInput:
    """Pixel grid, float64 in [0, 1], shape (height, width, channels)."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim == 2:
            self.pixels = self.pixels[:, :, None]
        if self.pixels.ndim != 3:
            raise ValueError(f"image must be HxWxC, got shape {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


def normalize_tweet(text: str) -> TextInput:
    """Lowercase, collapse whitespace runs, replace hyperlinks with "link".

    A token is a hyperlink when it starts with http://, https:// or www.
    (the whole whitespace-delimited run is replaced). Idempotent: feeding
    the normalized text back through is a no-op.
    """
    tokens = []
    for tok in text.lower().split():
        if tok.startswith(_LINK_PREFIXES):
            tokens.append("link")
        else:
            tokens.append(tok)
    return TextInput(raw=text, tokens=tokens)


# ---------------------------------------------------------------------------
# image augmentation
# ---------------------------------------------------------------------------

def bilinear_resize(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel-centre sampling.

    Same-size calls return the input values unchanged.
    """
    h, w, c = pixels.shape
    if (h, w) == (out_h, out_w):
        return pixels.copy()
    sy = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (sy - y0)[:, None, None]
    wx = (sx - x0)[None, :, None]
    top = pixels[y0][:, x0] * (1 - wx) + pixels[y0][:, x1] * wx
    bot = pixels[y1][:, x0] * (1 - wx) + pixels[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def resize_min_side(img: ImageInput, target: int) -> ImageInput:
    """Scale so the shorter side equals target, keeping aspect ratio."""
    h, w = img.height, img.width
    if min(h, w) == target:
        return ImageInput(img.pixels.copy())
    if h <= w:
        out_h = target
        out_w = max(1, round(w * target / h))
    else:
        out_w = target
        out_h = max(1, round(h * target / w))
    return ImageInput(bilinear_resize(img.pixels, out_h, out_w))


def crop_window(img: ImageInput, top: int, left: int, size: int) -> ImageInput:
    return ImageInput(img.pixels[top:top + size, left:left + size].copy())


def hflip(img: ImageInput) -> ImageInput:
    return ImageInput(img.pixels[:, ::-1].copy())


def augment_image(
    img: ImageInput,
    rng: Rng | None = None,
    training: bool = False,
    resize_short: int = DEFAULT_RESIZE_SHORT,
    crop: int = DEFAULT_CROP,
) -> ImageInput:
    """Resize-short + crop pipeline.

    Training draws a uniform crop origin and flips horizontally with
    probability 1/2; evaluation takes the centre crop and never flips.
    """
    if crop > resize_short:
        raise ValueError(f"crop {crop} exceeds resize_short {resize_short}")
    if img.height < 1 or img.width < 1:
        raise ValueError("empty image")
    scaled = resize_min_side(img, resize_short)
    max_top = scaled.height - crop
    max_left = scaled.width - crop
    if training:
        if rng is None:
            raise ValueError("training augmentation needs an Rng")
        top = int(rng.integers(0, max_top + 1))
        left = int(rng.integers(0, max_left + 1))
        out = crop_window(scaled, top, left, crop)
        if rng.random() < 0.5:
            out = hflip(out)
        return out
    return crop_window(scaled, max_top // 2, max_left // 2, crop)


# ---------------------------------------------------------------------------
# toy encoders
# ---------------------------------------------------------------------------

@dataclass
class ImageEncoderParams:
    w: Parameter
    b: Parameter

    def all(self):
        return [self.w, self.b]


@dataclass
class TextEncoderParams:
    w: Parameter
    b: Parameter
    vocab: int

    def all(self):
        return [self.w, self.b]


def init_image_encoder(in_dim: int, out_dim: int, rng: Rng) -> ImageEncoderParams:
    return ImageEncoderParams(
        w=make_param("img_enc.w", (in_dim, out_dim), rng),
        b=make_param("img_enc.b", (out_dim,), rng, kind="zeros"),
    )


def init_text_encoder(out_dim: int, rng: Rng, vocab: int = DEFAULT_VOCAB) -> TextEncoderParams:
    return TextEncoderParams(
        w=make_param("txt_enc.w", (vocab, out_dim), rng),
        b=make_param("txt_enc.b", (out_dim,), rng, kind="zeros"),
        vocab=vocab,
    )


def hash_tokens(tokens, vocab: int) -> np.ndarray:
    """Order-independent hashed bag-of-words counts (crc32 bucketing)."""
    counts = np.zeros(vocab)
    for tok in tokens:
        counts[zlib.crc32(tok.encode("utf-8")) % vocab] += 1.0
    return counts


def encode_image_toy(img: ImageInput | np.ndarray, params: ImageEncoderParams):
    """Flatten -> dense -> ReLU. Returns (feature, backward)."""
    pixels = img.pixels if isinstance(img, ImageInput) else np.asarray(img, dtype=np.float64)
    flat = pixels.reshape(-1)
    pre, back_d = dense(flat, params.w, params.b)
    feat, back_r = relu(pre)

    def backward(g):
        return back_d(back_r(g))

    return feat, backward


def encode_text_toy(txt: TextInput | str, params: TextEncoderParams):
    """Hashed bag of words -> dense -> ReLU. Returns (feature, backward)."""
    if isinstance(txt, str):
        txt = normalize_tweet(txt)
    counts = hash_tokens(txt.tokens, params.vocab)
    pre, back_d = dense(counts, params.w, params.b)
    feat, back_r = relu(pre)

    def backward(g):
        return back_d(back_r(g))

    return feat, backward


# ---------------------------------------------------------------------------
# precomputed feature files
# ---------------------------------------------------------------------------

def load_precomputed(path) -> dict[str, np.ndarray]:
    """Read {"id": ..., "vec": [...]} line-JSON into an id -> vector map.

    All vectors must share one dimension; the first row fixes it.
    """
    table: dict[str, np.ndarray] = {}
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            if "id" not in row or "vec" not in row:
                raise ValueError(f"{path}:{lineno}: row needs 'id' and 'vec' fields")
            vec = np.asarray(row["vec"], dtype=np.float64)
            if vec.ndim != 1:
                raise ValueError(f"feature for id {row['id']!r} is not a flat vector")
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise ValueError(
                    f"feature for id {row['id']!r} has dimension {vec.shape[0]}, expected {dim}"
                )
            table[str(row["id"])] = vec
    return table


def save_precomputed(path, table: dict[str, np.ndarray]):
    """Inverse of load_precomputed; float64 values survive bit-exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, vec in table.items():
            fh.write(json.dumps({"id": key, "vec": [float(v) for v in vec]}) + "\n")
