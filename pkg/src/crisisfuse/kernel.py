"""Small differentiable kernel for vector-sized networks.

Everything is float64 numpy. Differentiable ops return a pair
``(value, backward)`` where ``backward(upstream)`` accumulates parameter
gradients in place and returns the gradient w.r.t. the op input. The
network topology is fixed at call time, so composite models chain these
closures by hand instead of recording a graph.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np


def _as_f64(x):
    return np.asarray(x, dtype=np.float64)


@dataclass
class Parameter:
    """Named trainable tensor with an accumulated gradient."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.value = _as_f64(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0


class Rng:
    """Seeded random stream with derivable substreams.

    ``derive`` mixes extra keys (ints or strings) into the seed material,
    giving independent streams that are reproducible across runs and
    platforms. Strings are hashed with crc32 so the mapping is stable.
    """

    def __init__(self, seed, _entropy=None):
        self.seed = int(seed)
        self._entropy = tuple(_entropy) if _entropy is not None else (self.seed,)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(self._entropy))))

    def derive(self, *keys) -> "Rng":
        mixed = []
        for k in keys:
            if isinstance(k, str):
                mixed.append(zlib.crc32(k.encode("utf-8")))
            else:
                mixed.append(int(k))
        return Rng(self.seed, self._entropy + tuple(mixed))

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low, high, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size=None, p=None):
        return self._gen.choice(n, size=size, p=p)


def glorot_uniform(shape, rng: Rng) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], shape[0])
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, shape)


def make_param(name: str, shape, rng: Rng, kind="glorot") -> Parameter:
    """Create a Parameter whose init depends only on (rng seed, name)."""
    sub = rng.derive(name)
    if kind == "zeros":
        return Parameter(name, np.zeros(shape))
    return Parameter(name, glorot_uniform(shape, sub))


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------

def dense(x: np.ndarray, w: Parameter, b: Parameter):
    """Affine map y = W^T x + b for a single vector x of length n_in."""
    x = _as_f64(x)
    if x.ndim != 1 or w.value.shape[0] != x.shape[0]:
        raise ValueError(f"dense shape mismatch: x {x.shape} vs w {w.value.shape}")
    if b.value.shape != (w.value.shape[1],):
        raise ValueError(f"dense bias shape {b.value.shape} does not match w {w.value.shape}")
    y = w.value.T @ x + b.value

    def backward(g):
        g = _as_f64(g)
        w.grad += np.outer(x, g)
        b.grad += g
        return w.value @ g

    return y, backward


def relu(x: np.ndarray):
    x = _as_f64(x)
    y = np.maximum(x, 0.0)

    def backward(g):
        # subgradient 0 at the kink
        return np.where(x > 0.0, g, 0.0)

    return y, backward


_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


def sigmoid(x: np.ndarray):
    """Elementwise logistic, branch-stable so large |x| never overflows.

    Outputs are clamped to the nearest representable values inside (0, 1):
    a saturated gate still never fully opens or closes.
    """
    x = _as_f64(x)
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    np.clip(y, _SIG_LO, _SIG_HI, out=y)

    def backward(g):
        return g * y * (1.0 - y)

    return y, backward


def softmax_cross_entropy(logits: np.ndarray, label: int):
    """Cross-entropy of softmax(logits) against an integer class label.

    Returns (loss, backward); backward(scale) yields scale * (softmax - onehot).
    Uses the max-subtraction trick, so large logits are safe.
    """
    logits = _as_f64(logits)
    n = logits.shape[0]
    if not 0 <= label < n:
        raise IndexError(f"label {label} out of range for {n} classes")
    z = logits - np.max(logits)
    ez = np.exp(z)
    denom = np.sum(ez)
    probs = ez / denom
    loss = np.log(denom) - z[label]

    def backward(scale=1.0):
        g = probs.copy()
        g[label] -= 1.0
        return g * scale

    return float(loss), backward


def dropout(x: np.ndarray, rate: float, rng: Rng | None = None, training: bool = False):
    """Inverted dropout: kept units scaled by 1/(1-rate); identity in eval."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = _as_f64(x)
    if not training or rate == 0.0:
        return x, lambda g: _as_f64(g)
    if rng is None:
        raise ValueError("dropout in training mode needs an Rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    y = x * keep

    def backward(g):
        return _as_f64(g) * keep

    return y, backward


def self_attention(x: np.ndarray, w: Parameter, b: Parameter):
    """Gate a vector by a learned sigmoid of itself: sigma(W^T x + b) * x."""
    pre, back_dense = dense(x, w, b)
    m, back_sig = sigmoid(pre)
    y = m * x

    def backward(g):
        g = _as_f64(g)
        gx = g * m
        gm = g * x
        gx = gx + back_dense(back_sig(gm))
        return gx

    return y, backward


def sgd_step(params, lr: float):
    """In-place SGD update followed by gradient reset."""
    for p in params:
        p.value -= lr * p.grad
        p.zero_grad()


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def finite_diff_grad(f, params, eps: float = 1e-5):
    """Central-difference gradient of scalar f() w.r.t. each Parameter.

    f must be deterministic (reseed any internal randomness per call).
    Perturbs values in place and restores them exactly.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.value)
        flat_v = p.value.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_v.shape[0]):
            orig = flat_v[i]
            flat_v[i] = orig + eps
            hi = f()
            flat_v[i] = orig - eps
            lo = f()
            flat_v[i] = orig
            flat_g[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def relative_errors(fd: np.ndarray, bp: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """|fd-bp| / max(|fd|, |bp|, floor) elementwise.

    The floor keeps near-zero gradients from turning finite-difference
    noise into spurious relative error; any real backprop bug shows up on
    coordinates whose gradients exceed the floor.
    """
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(bp)), floor)
    return np.abs(fd - bp) / denom


def gradient_check(f, backprop, params, eps: float = 1e-5, floor: float = 1e-3):
    """Compare backprop gradients against finite differences.

    f: deterministic scalar closure over params. backprop: callable that
    runs f's computation once and fills every p.grad. Returns a dict
    name -> max relative error.
    """
    for p in params:
        p.zero_grad()
    backprop()
    bp = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()
    fd = finite_diff_grad(f, params, eps)
    report = {}
    for p, g_bp, g_fd in zip(params, bp, fd):
        err = relative_errors(g_fd, g_bp, floor)
        report[p.name] = float(np.max(err)) if err.size else 0.0
    return report
