"""Pure-numpy convolution kernels.

Fallback backend for the numba kernels in ``_conv_numba``: the kernel
window loop runs in Python (at most kt*kh*kw iterations) and the heavy
per-tap contraction goes through BLAS via ``np.tensordot``. All functions
take pre-padded inputs; padding and output-shape arithmetic live in
``mamafnet.tensor``.
"""

from __future__ import annotations

import numpy as np


def conv2d_forward(xp, w, b, sh, sw, ho, wo):
    n = xp.shape[0]
    co = w.shape[3]
    out = np.empty((n, ho, wo, co), dtype=xp.dtype)
    out[...] = b
    kh, kw = w.shape[0], w.shape[1]
    for u in range(kh):
        for v in range(kw):
            patch = xp[:, u : u + ho * sh : sh, v : v + wo * sw : sw, :]
            out += np.tensordot(patch, w[u, v], axes=([3], [0]))
    return out


def conv2d_input_grad(gout, w, padded_shape, sh, sw):
    kh, kw = w.shape[0], w.shape[1]
    ho, wo = gout.shape[1], gout.shape[2]
    dxp = np.zeros(padded_shape, dtype=gout.dtype)
    for u in range(kh):
        for v in range(kw):
            dxp[:, u : u + ho * sh : sh, v : v + wo * sw : sw, :] += np.tensordot(
                gout, w[u, v], axes=([3], [1])
            )
    return dxp


def conv2d_param_grad(xp, gout, kh, kw, sh, sw):
    ho, wo = gout.shape[1], gout.shape[2]
    ci = xp.shape[3]
    co = gout.shape[3]
    dw = np.empty((kh, kw, ci, co), dtype=gout.dtype)
    for u in range(kh):
        for v in range(kw):
            patch = xp[:, u : u + ho * sh : sh, v : v + wo * sw : sw, :]
            dw[u, v] = np.tensordot(patch, gout, axes=([0, 1, 2], [0, 1, 2]))
    db = gout.sum(axis=(0, 1, 2))
    return dw, db


def conv3d_forward(xp, w, b, st, sh, sw, to, ho, wo):
    co = w.shape[4]
    out = np.empty((to, ho, wo, co), dtype=xp.dtype)
    out[...] = b
    kt, kh, kw = w.shape[0], w.shape[1], w.shape[2]
    for q in range(kt):
        for u in range(kh):
            for v in range(kw):
                patch = xp[
                    q : q + to * st : st,
                    u : u + ho * sh : sh,
                    v : v + wo * sw : sw,
                    :,
                ]
                out += np.tensordot(patch, w[q, u, v], axes=([3], [0]))
    return out


def conv3d_input_grad(gout, w, padded_shape, st, sh, sw):
    kt, kh, kw = w.shape[0], w.shape[1], w.shape[2]
    to, ho, wo = gout.shape[0], gout.shape[1], gout.shape[2]
    dxp = np.zeros(padded_shape, dtype=gout.dtype)
    for q in range(kt):
        for u in range(kh):
            for v in range(kw):
                dxp[
                    q : q + to * st : st,
                    u : u + ho * sh : sh,
                    v : v + wo * sw : sw,
                    :,
                ] += np.tensordot(gout, w[q, u, v], axes=([3], [1]))
    return dxp


def conv3d_param_grad(xp, gout, kt, kh, kw, st, sh, sw):
    to, ho, wo = gout.shape[0], gout.shape[1], gout.shape[2]
    ci = xp.shape[3]
    co = gout.shape[3]
    dw = np.empty((kt, kh, kw, ci, co), dtype=gout.dtype)
    for q in range(kt):
        for u in range(kh):
            for v in range(kw):
                patch = xp[
                    q : q + to * st : st,
                    u : u + ho * sh : sh,
                    v : v + wo * sw : sw,
                    :,
                ]
                dw[q, u, v] = np.tensordot(patch, gout, axes=([0, 1, 2], [0, 1, 2]))
    db = gout.sum(axis=(0, 1, 2))
    return dw, db
