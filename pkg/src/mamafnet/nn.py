"""Trainable blocks, the loss, and the Adam optimizer.

Blocks are pure functions over tape nodes; parameters live in flat
``{name: array}`` dicts created by the ``init_*`` helpers (He-uniform
weights, zero biases). Attention is parameter-free: queries, keys, and
values are all the input itself, with tokens being the spatial positions
of each frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .errors import ConfigError
from .tensor import ShapeError

CONV2D_FILTERS = (64, 32, 16, 8)
MOTION_CHANNELS = 8
CONV3D_FILTERS = 3
EPS_LOG = 1e-7


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


# ---------------------------------------------------------------------------
# parameter initialization


def init_conv2d_block(rng, prefix: str, cin: int) -> dict[str, np.ndarray]:
    params = {}
    for i, f in enumerate(CONV2D_FILTERS):
        params[f"{prefix}.conv{i}.w"] = he_uniform(rng, (3, 3, cin, f), 9 * cin)
        params[f"{prefix}.conv{i}.b"] = np.zeros(f, dtype=np.float32)
        cin = f
    return params


def init_motion_aware(rng, prefix: str, c: int = MOTION_CHANNELS) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.feat.w": he_uniform(rng, (3, 3, c, c), 9 * c),
        f"{prefix}.feat.b": np.zeros(c, dtype=np.float32),
        f"{prefix}.gate.w": he_uniform(rng, (3, 3, c, c), 9 * c),
        f"{prefix}.gate.b": np.zeros(c, dtype=np.float32),
    }


def init_conv3d_block(rng, prefix: str, cin: int = MOTION_CHANNELS) -> dict[str, np.ndarray]:
    f = CONV3D_FILTERS
    return {
        f"{prefix}.conv0.w": he_uniform(rng, (3, 3, 3, cin, f), 27 * cin),
        f"{prefix}.conv0.b": np.zeros(f, dtype=np.float32),
        f"{prefix}.conv1.w": he_uniform(rng, (3, 3, 3, f, f), 27 * f),
        f"{prefix}.conv1.b": np.zeros(f, dtype=np.float32),
    }


def init_dense_head(rng, prefix: str, n_in: int, hidden: int) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.hidden.w": he_uniform(rng, (n_in, hidden), n_in),
        f"{prefix}.hidden.b": np.zeros(hidden, dtype=np.float32),
        f"{prefix}.out.w": he_uniform(rng, (hidden, 2), hidden),
        f"{prefix}.out.b": np.zeros(2, dtype=np.float32),
    }


# ---------------------------------------------------------------------------
# blocks


def conv2d_block(t: Tape, p: dict[str, Node], prefix: str, x: Node) -> Node:
    """Four stride-2 conv+ReLU stages; (N,H,W,C) -> (N,H/16,W/16,8)."""
    h, w = x.value.shape[1], x.value.shape[2]
    if h % 16 != 0 or w % 16 != 0:
        raise ConfigError(f"conv2d_block needs spatial dims divisible by 16, got {h}x{w}")
    for i in range(len(CONV2D_FILTERS)):
        x = ad.conv2d(t, x, p[f"{prefix}.conv{i}.w"], p[f"{prefix}.conv{i}.b"], stride=(2, 2))
        x = ad.relu(t, x)
    return x


def attention(t: Tape, x: Node) -> Node:
    """Scaled dot-product self-attention: softmax(x xT / sqrt(d)) x.

    Tokens are on the second-to-last axis, features on the last; leading
    axes are batched.
    """
    d = x.value.shape[-1]
    scores = ad.matmul(t, x, ad.transpose_last2(t, x))
    scores = ad.scale(t, scores, 1.0 / math.sqrt(d))
    return ad.matmul(t, ad.softmax(t, scores, axis=-1), x)


def spatial_attention(t: Tape, x: Node) -> Node:
    """Attention over each frame's h*w spatial positions as tokens."""
    n, h, w, c = x.value.shape
    tokens = ad.reshape(t, x, (n, h * w, c))
    return ad.reshape(t, attention(t, tokens), (n, h, w, c))


def motion_aware(t: Tape, p: dict[str, Node], prefix: str, x: Node, gate_mode: str = "motion") -> Node:
    """Temporal-difference gating of a feature map; shape preserved.

    The current features are differenced against their one-step temporal
    roll, the difference is emphasized with spatial attention, and the
    result drives a multiplicative gate on the block input. With
    ``gate_mode='identity'`` the gate is bypassed (ablation control) and
    the input passes through unchanged.
    """
    if gate_mode == "identity":
        return x
    if gate_mode != "motion":
        raise ConfigError(f"unknown gate_mode {gate_mode!r}")
    feat = ad.conv2d(t, x, p[f"{prefix}.feat.w"], p[f"{prefix}.feat.b"])
    shifted = ad.roll_forward(t, feat)
    delta = ad.sub(t, feat, shifted)
    enhanced = ad.add(t, feat, spatial_attention(t, delta))
    gate = ad.relu(t, ad.conv2d(t, enhanced, p[f"{prefix}.gate.w"], p[f"{prefix}.gate.b"]))
    return ad.mul(t, x, gate)


def multi_attention_fusion(t: Tape, branches) -> Node:
    """Per-branch spatial attention, then elementwise sum across branches."""
    shapes = {b.value.shape for b in branches}
    if len(shapes) != 1:
        raise ShapeError(f"fusion branches must share one shape, got {sorted(shapes)}")
    attended = [spatial_attention(t, b) for b in branches]
    out = attended[0]
    for a in attended[1:]:
        out = ad.add(t, out, a)
    return out


def conv3d_block(t: Tape, p: dict[str, Node], prefix: str, x: Node) -> Node:
    """Two 3-d conv+ReLU stages; (N,h,w,8) -> (N/25, ceil(h/2), ceil(w/2), 3)."""
    if x.value.shape[0] % 25 != 0:
        raise ConfigError(f"conv3d_block needs a sequence length divisible by 25, got {x.value.shape[0]}")
    x = ad.conv3d(t, x, p[f"{prefix}.conv0.w"], p[f"{prefix}.conv0.b"], stride=(5, 2, 2))
    x = ad.relu(t, x)
    x = ad.conv3d(t, x, p[f"{prefix}.conv1.w"], p[f"{prefix}.conv1.b"], stride=(5, 1, 1))
    return ad.relu(t, x)


def dense_head(t: Tape, p: dict[str, Node], prefix: str, x: Node) -> Node:
    """Hidden dense + ReLU, then a 2-way softmax; input is a flat vector."""
    n_in = p[f"{prefix}.hidden.w"].value.shape[0]
    if x.value.shape != (n_in,):
        raise ShapeError(f"dense head expects a flat input of length {n_in}, got shape {x.value.shape}")
    row = ad.reshape(t, x, (1, n_in))
    hidden = ad.relu(t, ad.add_bias(t, ad.matmul(t, row, p[f"{prefix}.hidden.w"]), p[f"{prefix}.hidden.b"]))
    logits = ad.add_bias(t, ad.matmul(t, hidden, p[f"{prefix}.out.w"]), p[f"{prefix}.out.b"])
    return ad.reshape(t, ad.softmax(t, logits, axis=-1), (2,))


def cross_entropy(t: Tape, pred: Node, target: np.ndarray) -> Node:
    """Mean categorical cross-entropy of probabilities against one-hot rows."""
    target = np.asarray(target)
    if target.shape != pred.value.shape:
        raise ShapeError(f"target shape {target.shape} does not match predictions {pred.value.shape}")
    one_hot = np.isin(target, (0, 1)).all() and np.array_equal(
        target.sum(axis=-1), np.ones(target.shape[:-1])
    )
    if not one_hot:
        raise ValueError("cross_entropy target must be one-hot rows of 0s and a single 1")
    pv = pred.value
    batch = int(np.prod(pv.shape[:-1]))
    tgt = target.astype(pv.dtype)
    value = np.asarray(-(tgt * np.log(pv + EPS_LOG)).sum() / batch, dtype=pv.dtype).reshape(1)

    def vjp(g):
        return (-(tgt / (pv + EPS_LOG)) * (g[0] / batch),)

    return t.emit(value, (pred,), vjp)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_init(params: dict[str, np.ndarray], lr: float = 1e-5, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
    )


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    """One bias-corrected Adam update, in place. Params without a gradient
    entry keep their value and moments."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * np.square(g)
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
