"""Numba-compiled convolution kernels.

Hot inner loops over output positions, with the channel axis innermost so
the per-tap accumulations vectorize (channel-last layout keeps them unit
stride). The input-gradient kernels take the weight tensor pre-transposed
to (.., Cout, Cin) for the same reason. All kernels run single-threaded
and accumulate in a fixed order, so results are bitwise reproducible.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_forward(xp, w, b, sh, sw, ho, wo):
    n = xp.shape[0]
    kh, kw, ci, co = w.shape
    out = np.empty((n, ho, wo, co), dtype=xp.dtype)
    for s in range(n):
        for i in range(ho):
            for j in range(wo):
                o = out[s, i, j]
                for c in range(co):
                    o[c] = b[c]
                for u in range(kh):
                    for v in range(kw):
                        xr = xp[s, i * sh + u, j * sw + v]
                        for p in range(ci):
                            xv = xr[p]
                            wr = w[u, v, p]
                            for c in range(co):
                                o[c] += xv * wr[c]
    return out


@njit(cache=True)
def conv2d_input_grad(gout, wt, n, hp, wp, ci, sh, sw):
    # wt is (kh, kw, Cout, Cin) so the innermost accumulation is unit stride
    kh, kw, co = wt.shape[0], wt.shape[1], wt.shape[2]
    ho, wo = gout.shape[1], gout.shape[2]
    dxp = np.zeros((n, hp, wp, ci), dtype=gout.dtype)
    for s in range(n):
        for i in range(ho):
            for j in range(wo):
                g = gout[s, i, j]
                for u in range(kh):
                    for v in range(kw):
                        dxr = dxp[s, i * sh + u, j * sw + v]
                        for c in range(co):
                            gv = g[c]
                            wr = wt[u, v, c]
                            for p in range(ci):
                                dxr[p] += wr[p] * gv
    return dxp


@njit(cache=True)
def conv2d_param_grad(xp, gout, kh, kw, sh, sw):
    n, ho, wo, co = gout.shape
    ci = xp.shape[3]
    dw = np.zeros((kh, kw, ci, co), dtype=gout.dtype)
    db = np.zeros(co, dtype=gout.dtype)
    for s in range(n):
        for i in range(ho):
            for j in range(wo):
                g = gout[s, i, j]
                for c in range(co):
                    db[c] += g[c]
                for u in range(kh):
                    for v in range(kw):
                        xr = xp[s, i * sh + u, j * sw + v]
                        for p in range(ci):
                            xv = xr[p]
                            dwr = dw[u, v, p]
                            for c in range(co):
                                dwr[c] += xv * g[c]
    return dw, db


@njit(cache=True)
def conv3d_forward(xp, w, b, st, sh, sw, to, ho, wo):
    kt, kh, kw, ci, co = w.shape
    out = np.empty((to, ho, wo, co), dtype=xp.dtype)
    for t in range(to):
        for i in range(ho):
            for j in range(wo):
                o = out[t, i, j]
                for c in range(co):
                    o[c] = b[c]
                for q in range(kt):
                    for u in range(kh):
                        for v in range(kw):
                            xr = xp[t * st + q, i * sh + u, j * sw + v]
                            for p in range(ci):
                                xv = xr[p]
                                wr = w[q, u, v, p]
                                for c in range(co):
                                    o[c] += xv * wr[c]
    return out


@njit(cache=True)
def conv3d_input_grad(gout, wt, tp, hp, wp, ci, st, sh, sw):
    kt, kh, kw, co = wt.shape[0], wt.shape[1], wt.shape[2], wt.shape[3]
    to, ho, wo = gout.shape[0], gout.shape[1], gout.shape[2]
    dxp = np.zeros((tp, hp, wp, ci), dtype=gout.dtype)
    for t in range(to):
        for i in range(ho):
            for j in range(wo):
                g = gout[t, i, j]
                for q in range(kt):
                    for u in range(kh):
                        for v in range(kw):
                            dxr = dxp[t * st + q, i * sh + u, j * sw + v]
                            for c in range(co):
                                gv = g[c]
                                wr = wt[q, u, v, c]
                                for p in range(ci):
                                    dxr[p] += wr[p] * gv
    return dxp


@njit(cache=True)
def conv3d_param_grad(xp, gout, kt, kh, kw, st, sh, sw):
    to, ho, wo, co = gout.shape
    ci = xp.shape[3]
    dw = np.zeros((kt, kh, kw, ci, co), dtype=gout.dtype)
    db = np.zeros(co, dtype=gout.dtype)
    for t in range(to):
        for i in range(ho):
            for j in range(wo):
                g = gout[t, i, j]
                for c in range(co):
                    db[c] += g[c]
                for q in range(kt):
                    for u in range(kh):
                        for v in range(kw):
                            xr = xp[t * st + q, i * sh + u, j * sw + v]
                            for p in range(ci):
                                xv = xr[p]
                                dwr = dw[q, u, v, p]
                                for c in range(co):
                                    dwr[c] += xv * g[c]
    return dw, db
