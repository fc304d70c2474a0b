"""Kernel backend selection.

The compiled extension (_native) is preferred for float32 work when it
imported cleanly; everything else routes to the numpy reference kernels.
Set PATCHFORGE_BACKEND=reference to force the fallback, =native to insist
on the compiled kernels (raises if unavailable). PATCHFORGE_THREADS sets
the compiled kernels' OpenMP worker count (default 1; BLAS threading is
controlled separately by the BLAS library).
"""

from __future__ import annotations

import os

import numpy as np

from . import _reference
from .errors import ConfigError

try:
    from . import _native
except ImportError:  # pragma: no cover - depends on build host
    _native = None

_FORCED = os.environ.get("PATCHFORGE_BACKEND", "").strip().lower()
if _FORCED == "native" and _native is None:
    raise ImportError("PATCHFORGE_BACKEND=native but the compiled extension is not built")
if _FORCED not in ("", "native", "reference"):
    raise ConfigError(f"unknown PATCHFORGE_BACKEND value {_FORCED!r}")

_use_native = _native is not None and _FORCED != "reference"

# Default the OpenMP loops to one thread: the BLAS inside the conv kernels
# is already multithreaded, and competing with its spin-waiting workers is a
# large net loss. Raise PATCHFORGE_THREADS only with BLAS threads pinned.
if _native is not None:
    try:
        _threads = int(os.environ.get("PATCHFORGE_THREADS", "1"))
    except ValueError:
        _threads = 1
    _native.set_num_threads(max(1, _threads))


def backend_name() -> str:
    return "native" if _use_native else "reference"


def has_native() -> bool:
    return _native is not None


def set_num_threads(n: int) -> None:
    if _native is not None:
        _native.set_num_threads(int(n))


def _pick(x: np.ndarray):
    if _use_native and x.dtype == np.float32:
        return _native
    return _reference


def conv2d_forward(x, weight, stride, padding):
    return _pick(x).conv2d_forward(x, weight, stride, padding)


def conv2d_backward_weight(x, grad_out, stride, padding, kh, kw):
    return _pick(x).conv2d_backward_weight(x, grad_out, stride, padding, kh, kw)


def conv2d_backward_input(grad_out, weight, stride, padding, in_h, in_w):
    return _pick(grad_out).conv2d_backward_input(grad_out, weight, stride, padding, in_h, in_w)


def resample_bilinear_forward(src, out_h, out_w, sy, sx, oy, ox):
    return _pick(src).resample_bilinear_forward(src, out_h, out_w, sy, sx, oy, ox)


def resample_bilinear_backward(grad_out, src_h, src_w, sy, sx, oy, ox):
    return _pick(grad_out).resample_bilinear_backward(grad_out, src_h, src_w, sy, sx, oy, ox)


def maxpool2_forward(x):
    return _pick(x).maxpool2_forward(x)


def maxpool2_backward(grad_out, argmax, h, w):
    return _pick(grad_out).maxpool2_backward(grad_out, argmax, h, w)
