"""Pure-numpy kernels: the fallback backend.

Every function here has a compiled twin in _native.pyx. Signatures and
semantics must stay identical; tests compare the two backends directly.
All kernels accept float32 or float64 input (the compiled backend only
handles float32, so float64 always lands here).

Convolution uses im2col plus BLAS matmul; the backward pass w.r.t. the
input is expressed as a convolution of the (zero-dilated) output gradient
with the flipped kernel, which keeps everything inside BLAS.
"""

from __future__ import annotations

import numpy as np


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> tuple[np.ndarray, int, int]:
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (x.shape[2] - kh) // stride + 1
    ow = (x.shape[3] - kw) // stride + 1
    s = x.strides
    view = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, kh, kw, oh, ow),
        strides=(s[0], s[1], s[2], s[3], s[2] * stride, s[3] * stride),
    )
    cols = np.ascontiguousarray(view).reshape(n, c * kh * kw, oh * ow)
    return cols, oh, ow


def conv2d_forward(x: np.ndarray, weight: np.ndarray, stride: int, padding: int) -> np.ndarray:
    n = x.shape[0]
    co, ci, kh, kw = weight.shape
    cols, oh, ow = _im2col(x, kh, kw, stride, padding)
    out = np.matmul(weight.reshape(co, ci * kh * kw)[None], cols)
    return out.reshape(n, co, oh, ow)


def conv2d_backward_weight(x: np.ndarray, grad_out: np.ndarray, stride: int, padding: int,
                           kh: int, kw: int) -> np.ndarray:
    n, co = grad_out.shape[:2]
    cols, oh, ow = _im2col(x, kh, kw, stride, padding)
    g = grad_out.reshape(n, co, oh * ow)
    gw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)
    return gw.reshape(co, x.shape[1], kh, kw)


def conv2d_backward_input(grad_out: np.ndarray, weight: np.ndarray, stride: int, padding: int,
                          in_h: int, in_w: int) -> np.ndarray:
    n, co, oh, ow = grad_out.shape
    _, ci, kh, kw = weight.shape
    if stride > 1:
        dil = np.zeros((n, co, (oh - 1) * stride + 1, (ow - 1) * stride + 1), dtype=grad_out.dtype)
        dil[:, :, ::stride, ::stride] = grad_out
    else:
        dil = grad_out
    # full correlation with the spatially flipped kernel, channels swapped;
    # the right/bottom pad absorbs input rows the forward windows only
    # reached through the zero padding
    wt = weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).copy()
    top = kh - 1 - padding
    left = kw - 1 - padding
    bottom = in_h - 1 + padding - (oh - 1) * stride
    right = in_w - 1 + padding - (ow - 1) * stride
    dil = np.pad(dil, ((0, 0), (0, 0), (top, bottom), (left, right)))
    return conv2d_forward(dil, wt, 1, 0)


def resample_bilinear_forward(src: np.ndarray, out_h: int, out_w: int,
                              sy: float, sx: float, oy: float, ox: float) -> np.ndarray:
    """Sample src on the grid src_y = (yo+0.5)*sy + oy - 0.5 (clamped), bilinear."""
    n, c, h, w = src.shape
    ys = np.clip((np.arange(out_h) + 0.5) * sy + oy - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * sx + ox - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).astype(src.dtype)
    fx = (xs - x0).astype(src.dtype)
    tl = src[:, :, y0[:, None], x0[None, :]]
    tr = src[:, :, y0[:, None], x1[None, :]]
    bl = src[:, :, y1[:, None], x0[None, :]]
    br = src[:, :, y1[:, None], x1[None, :]]
    top = tl + (tr - tl) * fx[None, None, None, :]
    bot = bl + (br - bl) * fx[None, None, None, :]
    return top + (bot - top) * fy[None, None, :, None]


def resample_bilinear_backward(grad_out: np.ndarray, src_h: int, src_w: int,
                               sy: float, sx: float, oy: float, ox: float) -> np.ndarray:
    n, c, out_h, out_w = grad_out.shape
    ys = np.clip((np.arange(out_h) + 0.5) * sy + oy - 0.5, 0, src_h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * sx + ox - 0.5, 0, src_w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    fy = (ys - y0).astype(grad_out.dtype)
    fx = (xs - x0).astype(grad_out.dtype)
    grad_src = np.zeros((n, c, src_h, src_w), dtype=grad_out.dtype)
    wy0 = (1 - fy)[:, None]
    wy1 = fy[:, None]
    wx0 = (1 - fx)[None, :]
    wx1 = fx[None, :]
    yy0 = np.broadcast_to(y0[:, None], (out_h, out_w))
    yy1 = np.broadcast_to(y1[:, None], (out_h, out_w))
    xx0 = np.broadcast_to(x0[None, :], (out_h, out_w))
    xx1 = np.broadcast_to(x1[None, :], (out_h, out_w))
    for b in range(n):
        for ch in range(c):
            g = grad_out[b, ch]
            np.add.at(grad_src[b, ch], (yy0, xx0), g * wy0 * wx0)
            np.add.at(grad_src[b, ch], (yy0, xx1), g * wy0 * wx1)
            np.add.at(grad_src[b, ch], (yy1, xx0), g * wy1 * wx0)
            np.add.at(grad_src[b, ch], (yy1, xx1), g * wy1 * wx1)
    return grad_src


def maxpool2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 stride-2 max pooling. Returns (out, argmax) with argmax in {0..3}
    encoding (dy*2+dx); ties resolve to the first window position."""
    n, c, h, w = x.shape
    oh, ow = h // 2, w // 2
    win = x[:, :, : oh * 2, : ow * 2].reshape(n, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = win.reshape(n, c, oh, ow, 4)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, arg.astype(np.int8)


def maxpool2_backward(grad_out: np.ndarray, argmax: np.ndarray, h: int, w: int) -> np.ndarray:
    n, c, oh, ow = grad_out.shape
    grad = np.zeros((n, c, oh, ow, 4), dtype=grad_out.dtype)
    np.put_along_axis(grad, argmax[..., None].astype(np.int64), grad_out[..., None], axis=-1)
    grad = grad.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh * 2, ow * 2)
    if oh * 2 != h or ow * 2 != w:
        grad = np.pad(grad, ((0, 0), (0, 0), (0, h - oh * 2), (0, w - ow * 2)))
    return grad
