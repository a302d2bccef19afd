"""Primitive tensor operations.

Dense tensors are plain numpy arrays, row-major, channel-last, float32 by
default (float64 is accepted everywhere so oracles and gradient checks
can run in higher precision). Every operation is pure: inputs are never
mutated.

Same-padding convention: total padding per axis is
``max((ceil(in/s) - 1)*s + k - in, 0)``, split with the smaller half on
the leading side, which gives output extent ``ceil(in/s)`` for every
stride.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


def _as_float(x) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float32)
    return x


def same_pad_amounts(size: int, k: int, s: int) -> tuple[int, int]:
    total = max((math.ceil(size / s) - 1) * s + k - size, 0)
    lo = total // 2
    return lo, total - lo


def conv_output_size(size: int, k: int, s: int, padding: str) -> int:
    if padding == "same":
        return math.ceil(size / s)
    return (size - k) // s + 1


def _check_padding(padding: str) -> None:
    if padding not in ("same", "valid"):
        raise ShapeError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv2d_prepare(x, w, b, stride, padding):
    """Validate conv2d operands and return (padded input, w, b, sh, sw, ho, wo)."""
    x, w, b = _as_float(x), _as_float(w), _as_float(b)
    _check_padding(padding)
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be 4-d [N,H,W,Cin], got shape {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"conv2d kernel must be 4-d [kh,kw,Cin,Cout], got shape {w.shape}")
    if x.shape[3] != w.shape[2]:
        raise ShapeError(
            f"conv2d channel mismatch: input has Cin={x.shape[3]}, kernel expects {w.shape[2]}"
        )
    if b.shape != (w.shape[3],):
        raise ShapeError(f"conv2d bias must have shape ({w.shape[3]},), got {b.shape}")
    sh, sw = int(stride[0]), int(stride[1])
    if sh < 1 or sw < 1:
        raise ShapeError(f"conv2d strides must be >= 1, got {stride}")
    _, h, wid, _ = x.shape
    kh, kw = w.shape[0], w.shape[1]
    ho = conv_output_size(h, kh, sh, padding)
    wo = conv_output_size(wid, kw, sw, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d produces empty output for input {x.shape}, kernel {w.shape[:2]}, "
            f"stride {stride}, padding {padding!r}"
        )
    dtype = np.result_type(x, w, b)
    x, w, b = x.astype(dtype, copy=False), w.astype(dtype, copy=False), b.astype(dtype, copy=False)
    xp = pad_same_2d(x, kh, kw, sh, sw) if padding == "same" else np.ascontiguousarray(x)
    return xp, w, b, sh, sw, ho, wo


def conv2d(x, w, b, stride=(1, 1), padding="same") -> np.ndarray:
    """Cross-correlation of x[N,H,W,Cin] with w[kh,kw,Cin,Cout] plus bias.

    The leading axis is a plain batch axis (frames are convolved
    independently).
    """
    xp, w, b, sh, sw, ho, wo = conv2d_prepare(x, w, b, stride, padding)
    return kernels.conv2d_forward(xp, w, b, sh, sw, ho, wo)


def pad_same_2d(x, kh, kw, sh, sw) -> np.ndarray:
    (ht, hb) = same_pad_amounts(x.shape[1], kh, sh)
    (wl, wr) = same_pad_amounts(x.shape[2], kw, sw)
    if ht == hb == wl == wr == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (ht, hb), (wl, wr), (0, 0)))


def conv3d_prepare(x, w, b, stride, padding):
    """Validate conv3d operands and return (padded input, w, b, strides, out dims)."""
    x, w, b = _as_float(x), _as_float(w), _as_float(b)
    if padding != "same":
        raise ShapeError(f"conv3d supports only same-padding, got {padding!r}")
    if x.ndim != 4:
        raise ShapeError(f"conv3d input must be 4-d [N,H,W,Cin], got shape {x.shape}")
    if w.ndim != 5:
        raise ShapeError(f"conv3d kernel must be 5-d [kt,kh,kw,Cin,Cout], got shape {w.shape}")
    if x.shape[3] != w.shape[3]:
        raise ShapeError(
            f"conv3d channel mismatch: input has Cin={x.shape[3]}, kernel expects {w.shape[3]}"
        )
    if b.shape != (w.shape[4],):
        raise ShapeError(f"conv3d bias must have shape ({w.shape[4]},), got {b.shape}")
    st, sh, sw = (int(s) for s in stride)
    if min(st, sh, sw) < 1:
        raise ShapeError(f"conv3d strides must be >= 1, got {stride}")
    t, h, wid, _ = x.shape
    kt, kh, kw = w.shape[0], w.shape[1], w.shape[2]
    to = conv_output_size(t, kt, st, "same")
    ho = conv_output_size(h, kh, sh, "same")
    wo = conv_output_size(wid, kw, sw, "same")
    dtype = np.result_type(x, w, b)
    x, w, b = x.astype(dtype, copy=False), w.astype(dtype, copy=False), b.astype(dtype, copy=False)
    xp = pad_same_3d(x, kt, kh, kw, st, sh, sw)
    return xp, w, b, st, sh, sw, to, ho, wo


def conv3d(x, w, b, stride, padding="same") -> np.ndarray:
    """Cross-correlation of x[N,H,W,Cin] with w[kt,kh,kw,Cin,Cout] plus bias.

    The leading axis is temporal and is swept by the kernel, unlike
    conv2d where it is a batch axis. Only same-padding is supported.
    """
    xp, w, b, st, sh, sw, to, ho, wo = conv3d_prepare(x, w, b, stride, padding)
    return kernels.conv3d_forward(xp, w, b, st, sh, sw, to, ho, wo)


def pad_same_3d(x, kt, kh, kw, st, sh, sw) -> np.ndarray:
    (tf, tb) = same_pad_amounts(x.shape[0], kt, st)
    (ht, hb) = same_pad_amounts(x.shape[1], kh, sh)
    (wl, wr) = same_pad_amounts(x.shape[2], kw, sw)
    if tf == tb == ht == hb == wl == wr == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((tf, tb), (ht, hb), (wl, wr), (0, 0)))


def matmul(a, b) -> np.ndarray:
    """Batched matrix product; leading batch dims must match exactly."""
    a, b = _as_float(a), _as_float(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dims differ: {a.shape} x {b.shape}")
    return a @ b


def softmax(x, axis: int = -1) -> np.ndarray:
    """Stable softmax along one axis (max-subtracted)."""
    x = _as_float(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {x.shape}")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def relu(x) -> np.ndarray:
    return np.maximum(_as_float(x), 0)


def roll_forward(x) -> np.ndarray:
    """Shift one step along the leading axis: out[i] = in[i+1], out[-1] = in[0]."""
    x = _as_float(x)
    if x.shape[0] < 1:
        raise ShapeError("roll_forward needs a nonempty leading axis")
    return np.roll(x, -1, axis=0)


def _binary(a, b, op):
    a, b = _as_float(a), _as_float(b)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise op needs identical shapes, got {a.shape} and {b.shape}")
    return op(a, b)


def add(a, b) -> np.ndarray:
    return _binary(a, b, np.add)


def sub(a, b) -> np.ndarray:
    return _binary(a, b, np.subtract)


def mul(a, b) -> np.ndarray:
    return _binary(a, b, np.multiply)


def reshape(x, new_shape) -> np.ndarray:
    x = _as_float(x)
    new_shape = tuple(int(d) for d in new_shape)
    if math.prod(new_shape) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} ({x.size} elements) to {new_shape}")
    return x.reshape(new_shape)


def flatten(x) -> np.ndarray:
    return reshape(x, (np.asarray(x).size,))
