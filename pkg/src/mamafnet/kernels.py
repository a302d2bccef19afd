"""Backend selection for the convolution kernels.

Two interchangeable backends compute the same contracts:

* ``numba``  - compiled nested loops (:mod:`mamafnet._conv_numba`), the
  default whenever numba imports.
* ``numpy``  - pure-numpy slicing + BLAS (:mod:`mamafnet._conv_numpy`).

The ``MAMAF_KERNELS`` environment variable picks the backend at import
time (``numba`` or ``numpy``); :func:`set_backend` switches it at runtime
for tests and benchmarks. Both backends are deterministic for a fixed
input, but they are not bitwise identical to each other, so a
reproducible pipeline must stay on one backend.
"""

from __future__ import annotations

import os

import numpy as np

from . import _conv_numpy

_ENV_VAR = "MAMAF_KERNELS"
_numba_error = None
try:
    from . import _conv_numba
except ImportError as exc:  # pragma: no cover - exercised only without numba
    _conv_numba = None
    _numba_error = exc


class _NumbaBackend:
    name = "numba"

    @staticmethod
    def conv2d_forward(xp, w, b, sh, sw, ho, wo):
        return _conv_numba.conv2d_forward(xp, w, b, sh, sw, ho, wo)

    @staticmethod
    def conv2d_input_grad(gout, w, padded_shape, sh, sw):
        wt = np.ascontiguousarray(w.transpose(0, 1, 3, 2))
        n, hp, wp, ci = padded_shape
        return _conv_numba.conv2d_input_grad(gout, wt, n, hp, wp, ci, sh, sw)

    @staticmethod
    def conv2d_param_grad(xp, gout, kh, kw, sh, sw):
        return _conv_numba.conv2d_param_grad(xp, gout, kh, kw, sh, sw)

    @staticmethod
    def conv3d_forward(xp, w, b, st, sh, sw, to, ho, wo):
        return _conv_numba.conv3d_forward(xp, w, b, st, sh, sw, to, ho, wo)

    @staticmethod
    def conv3d_input_grad(gout, w, padded_shape, st, sh, sw):
        wt = np.ascontiguousarray(w.transpose(0, 1, 2, 4, 3))
        tp, hp, wp, ci = padded_shape
        return _conv_numba.conv3d_input_grad(gout, wt, tp, hp, wp, ci, st, sh, sw)

    @staticmethod
    def conv3d_param_grad(xp, gout, kt, kh, kw, st, sh, sw):
        return _conv_numba.conv3d_param_grad(xp, gout, kt, kh, kw, st, sh, sw)


_BACKENDS = {"numpy": _conv_numpy}
if _conv_numba is not None:
    _BACKENDS["numba"] = _NumbaBackend


def _initial_backend() -> str:
    requested = os.environ.get(_ENV_VAR, "").strip().lower()
    if requested:
        if requested not in ("numba", "numpy"):
            raise ValueError(
                f"{_ENV_VAR} must be 'numba' or 'numpy', got {requested!r}"
            )
        if requested == "numba" and _conv_numba is None:
            raise ImportError(
                f"{_ENV_VAR}=numba but numba is unavailable: {_numba_error}"
            )
        return requested
    return "numba" if _conv_numba is not None else "numpy"


_active = _BACKENDS[_initial_backend()]


def active_backend() -> str:
    """Name of the kernel backend currently in use."""
    return "numpy" if _active is _conv_numpy else "numba"


def set_backend(name: str) -> None:
    """Switch the kernel backend ('numba' or 'numpy') for this process."""
    global _active
    if name not in _BACKENDS:
        available = ", ".join(sorted(_BACKENDS))
        raise ValueError(f"unknown kernel backend {name!r} (available: {available})")
    _active = _BACKENDS[name]


def conv2d_forward(xp, w, b, sh, sw, ho, wo):
    return _active.conv2d_forward(xp, w, b, sh, sw, ho, wo)


def conv2d_input_grad(gout, w, padded_shape, sh, sw):
    return _active.conv2d_input_grad(gout, w, padded_shape, sh, sw)


def conv2d_param_grad(xp, gout, kh, kw, sh, sw):
    return _active.conv2d_param_grad(xp, gout, kh, kw, sh, sw)


def conv3d_forward(xp, w, b, st, sh, sw, to, ho, wo):
    return _active.conv3d_forward(xp, w, b, st, sh, sw, to, ho, wo)


def conv3d_input_grad(gout, w, padded_shape, st, sh, sw):
    return _active.conv3d_input_grad(gout, w, padded_shape, st, sh, sw)


def conv3d_param_grad(xp, gout, kt, kh, kw, st, sh, sw):
    return _active.conv3d_param_grad(xp, gout, kt, kh, kw, st, sh, sw)
