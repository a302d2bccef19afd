"""Shared fixtures and independent brute-force oracles.

The oracles are deliberately naive: float64 Python loops with explicit
padding arithmetic, no vectorization, so they share nothing with the
kernel implementations they check.
"""

from __future__ import annotations

import math

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pad_amounts(size: int, k: int, s: int) -> tuple[int, int]:
    total = max((math.ceil(size / s) - 1) * s + k - size, 0)
    return total // 2, total - total // 2


def conv2d_oracle(x, w, b, stride=(1, 1), padding="same"):
    """Direct windowed sum over every output position, in float64."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, h, wid, ci = x.shape
    kh, kw, _, co = w.shape
    sh, sw = stride
    if padding == "same":
        ho, wo = math.ceil(h / sh), math.ceil(wid / sw)
        ph, _ = pad_amounts(h, kh, sh)
        pw, _ = pad_amounts(wid, kw, sw)
    else:
        ho, wo = (h - kh) // sh + 1, (wid - kw) // sw + 1
        ph = pw = 0
    out = np.zeros((n, ho, wo, co))
    for s in range(n):
        for i in range(ho):
            for j in range(wo):
                for c in range(co):
                    acc = b[c]
                    for u in range(kh):
                        for v in range(kw):
                            yy = i * sh + u - ph
                            xx = j * sw + v - pw
                            if 0 <= yy < h and 0 <= xx < wid:
                                for p in range(ci):
                                    acc += x[s, yy, xx, p] * w[u, v, p, c]
                    out[s, i, j, c] = acc
    return out


def conv3d_oracle(x, w, b, stride):
    """Direct six-nested-loop sum with same-padding, in float64."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    t, h, wid, ci = x.shape
    kt, kh, kw, _, co = w.shape
    st, sh, sw = stride
    to, ho, wo = math.ceil(t / st), math.ceil(h / sh), math.ceil(wid / sw)
    pt, _ = pad_amounts(t, kt, st)
    ph, _ = pad_amounts(h, kh, sh)
    pw, _ = pad_amounts(wid, kw, sw)
    out = np.zeros((to, ho, wo, co))
    for m in range(to):
        for i in range(ho):
            for j in range(wo):
                for c in range(co):
                    acc = b[c]
                    for q in range(kt):
                        for u in range(kh):
                            for v in range(kw):
                                tt = m * st + q - pt
                                yy = i * sh + u - ph
                                xx = j * sw + v - pw
                                if 0 <= tt < t and 0 <= yy < h and 0 <= xx < wid:
                                    for p in range(ci):
                                        acc += x[tt, yy, xx, p] * w[q, u, v, p, c]
                    out[m, i, j, c] = acc
    return out


def matmul_oracle(a, b):
    """Triple loop product of two 2-d matrices, in float64."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[p, j]
            out[i, j] = acc
    return out


def attention_oracle(x):
    """Explicit scaled dot-product attention over (tokens, dim), float64."""
    x = np.asarray(x, dtype=np.float64)
    t, d = x.shape
    out = np.zeros((t, d))
    for i in range(t):
        scores = np.array([sum(x[i, p] * x[j, p] for p in range(d)) / math.sqrt(d) for j in range(t)])
        scores -= scores.max()
        weights = np.exp(scores)
        weights /= weights.sum()
        for j in range(t):
            out[i] += weights[j] * x[j]
    return out


def pair_count_auc(preds) -> float:
    """AUC as the probability a positive outscores a negative, ties half."""
    pos = [p.score for p in preds if p.label == 1]
    neg = [p.score for p in preds if p.label == 0]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else (0.5 if a == b else 0.0)
    return total / (len(pos) * len(neg))
