"""Reverse-mode automatic differentiation over dense rank-4 tensors.

Tensors are (batch, channel, height, width) float32 arrays (float64 is
accepted too and is what the gradient-check harness uses). Each operation
records its parents and a backward rule on the output tensor; backward()
does an iterative depth-first topological walk from the loss, so every
node is visited exactly once, after all of its consumers. Leaf gradients
accumulate across repeated backward calls until zero_grad().

There is no global tape: graphs built on different threads are fully
independent. Tensors that participate in a graph are never mutated in
place by any op here.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from . import backend
from .errors import ContractError, ShapeError
from .geometry import BoundingBox

Array = np.ndarray


def _as_data(data, dtype=None) -> Array:
    arr = np.asarray(data)
    if dtype is None:
        dtype = np.float64 if arr.dtype == np.float64 else np.float32
    arr = np.asarray(arr, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1, 1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, 1, 1, -1)
    if arr.ndim != 4:
        raise ShapeError(f"tensors are rank-4 (n,c,h,w), got shape {arr.shape}")
    return arr


class Tensor:
    """Dense rank-4 tensor with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_data(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[Array] = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Optional[Callable[[Array], Sequence[Optional[Array]]]] = None

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    def __radd__(self, other):
        return add_scalar(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else mul_scalar(self, other)

    def __rmul__(self, other):
        return mul_scalar(self, other)

    def __truediv__(self, other):
        return div(self, other) if isinstance(other, Tensor) else mul_scalar(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return powc(self, p)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _result(data: Array, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward_fn = backward_fn
    else:
        out._parents = ()
        out._backward_fn = None
    return out


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dLeaf into every requires_grad leaf below loss."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward_fn is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op} needs equal shapes, got {a.shape} vs {b.shape}")


# -- elementwise ---------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "div")
    out = a.data / b.data
    return _result(out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _result(a.data + c, (a,), lambda g: (g,))


def mul_scalar(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    return _result(out, (a,), lambda g: (g * (a.data > 0),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def powc(a: Tensor, p: float) -> Tensor:
    out = a.data ** p
    if p == 0:
        return _result(out, (a,), lambda g: (np.zeros_like(a.data),))
    return _result(out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))).astype(x.dtype)
    return _result(out, (a,), lambda g: (g * out * (1 - out),))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))).astype(x.dtype)
    return _result(out.astype(x.dtype), (a,), lambda g: (g * sig,))


def maximum(a: Tensor, b) -> Tensor:
    """Elementwise max; on ties the gradient goes to the first argument."""
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "maximum")
        mask = a.data >= b.data
        return _result(np.maximum(a.data, b.data), (a, b),
                       lambda g: (g * mask, g * ~mask))
    mask = a.data >= b
    return _result(np.maximum(a.data, b), (a,), lambda g: (g * mask,))


def minimum(a: Tensor, b) -> Tensor:
    """Elementwise min; on ties the gradient goes to the first argument."""
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "minimum")
        mask = a.data <= b.data
        return _result(np.minimum(a.data, b.data), (a, b),
                       lambda g: (g * mask, g * ~mask))
    mask = a.data <= b
    return _result(np.minimum(a.data, b), (a,), lambda g: (g * mask,))


# -- reductions / indexing ------------------------------------------------

def tsum(a: Tensor) -> Tensor:
    out = np.array(a.data.sum(), dtype=a.data.dtype).reshape(1, 1, 1, 1)
    return _result(out, (a,), lambda g: (np.broadcast_to(g.reshape(()), a.shape).astype(a.data.dtype),))


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.array(a.data.mean(), dtype=a.data.dtype).reshape(1, 1, 1, 1)
    return _result(out, (a,),
                   lambda g: ((np.broadcast_to(g.reshape(()), a.shape) / n).astype(a.data.dtype),))


def take(a: Tensor, indices: np.ndarray) -> Tensor:
    """Gather from the flattened tensor; output shape (1,1,1,len(indices))."""
    idx = np.asarray(indices, dtype=np.int64)
    flat = a.data.reshape(-1)
    out = flat[idx].reshape(1, 1, 1, -1)

    def bwd(g):
        gflat = np.zeros_like(flat)
        np.add.at(gflat, idx, g.reshape(-1))
        return (gflat.reshape(a.shape),)

    return _result(out, (a,), bwd)


def reshape(a: Tensor, shape: tuple[int, int, int, int]) -> Tensor:
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


# -- structured ops -------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross correlation; output dims floor((d + 2p - k)/stride) + 1."""
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.shape} vs kernel {weight.shape}")
    kh, kw = weight.shape[2], weight.shape[3]
    if padding < 0 or padding >= max(kh, kw):
        raise ShapeError(f"padding must be in [0, kernel), got {padding} for {kh}x{kw}")
    if x.shape[2] + 2 * padding < kh or x.shape[3] + 2 * padding < kw:
        raise ShapeError(f"input {x.shape} smaller than kernel {weight.shape}")
    out = backend.conv2d_forward(x.data, weight.data, stride, padding)
    if bias is not None:
        if bias.shape != (1, weight.shape[0], 1, 1):
            raise ShapeError(f"bias must be (1,{weight.shape[0]},1,1), got {bias.shape}")
        out = out + bias.data

    in_h, in_w = x.shape[2], x.shape[3]

    def bwd(g):
        g = np.ascontiguousarray(g)
        gx = backend.conv2d_backward_input(g, weight.data, stride, padding, in_h, in_w) \
            if x.requires_grad else None
        gw = backend.conv2d_backward_weight(x.data, g, stride, padding, kh, kw) \
            if weight.requires_grad else None
        if bias is None:
            return (gx, gw)
        gb = g.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1) if bias.requires_grad else None
        return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, bwd)


def upsample2x_bilinear(x: Tensor) -> Tensor:
    """Double height and width with bilinear interpolation (half-pixel centers)."""
    n, c, h, w = x.shape
    out = backend.resample_bilinear_forward(x.data, 2 * h, 2 * w, 0.5, 0.5, 0.0, 0.0)
    return _result(out, (x,), lambda g: (
        backend.resample_bilinear_backward(np.ascontiguousarray(g), h, w, 0.5, 0.5, 0.0, 0.0),))


def maxpool2(x: Tensor) -> Tensor:
    """2x2 stride-2 max pooling; odd trailing rows/cols are dropped."""
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool2 needs h,w >= 2, got {x.shape}")
    out, arg = backend.maxpool2_forward(x.data)
    return _result(out, (x,), lambda g: (
        backend.maxpool2_backward(np.ascontiguousarray(g), arg, h, w),))


def softmax_channel(x: Tensor) -> Tensor:
    """Softmax over the channel axis at every (n, h, w) location."""
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return _result(out, (x,), bwd)


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize to (out_h, out_w), bilinear, half-pixel centers."""
    n, c, h, w = x.shape
    sy, sx = h / out_h, w / out_w
    out = backend.resample_bilinear_forward(x.data, out_h, out_w, sy, sx, 0.0, 0.0)
    return _result(out, (x,), lambda g: (
        backend.resample_bilinear_backward(np.ascontiguousarray(g), h, w, sy, sx, 0.0, 0.0),))


def paste_patch(image: Tensor, patch: Tensor, region: BoundingBox
                ) -> tuple[Tensor, Optional[BoundingBox]]:
    """Bilinearly resize the patch into region and overwrite the image there.

    The region is clipped to image bounds; a pixel belongs to the region iff
    its center falls inside. Returns (output, clipped_region); clipped_region
    is None when the region misses the image entirely, in which case the
    image tensor itself is returned untouched.
    """
    n, c, h, w = image.shape
    if patch.shape[0] != 1 or patch.shape[1] != c:
        raise ShapeError(f"patch {patch.shape} incompatible with image {image.shape}")
    ph, pw = patch.shape[2], patch.shape[3]
    rx1, ry1, rx2, ry2 = region.corners()
    x0 = max(0, int(np.ceil(rx1 - 0.5)))
    y0 = max(0, int(np.ceil(ry1 - 0.5)))
    x1 = min(w, int(np.ceil(rx2 - 0.5)))
    y1 = min(h, int(np.ceil(ry2 - 0.5)))
    if x1 <= x0 or y1 <= y0:
        return image, None
    bh, bw = y1 - y0, x1 - x0
    sy = ph / region.h
    sx = pw / region.w
    oy = (y0 - ry1) * sy
    ox = (x0 - rx1) * sx
    block = backend.resample_bilinear_forward(patch.data, bh, bw, sy, sx, oy, ox)
    out = image.data.copy()
    out[:, :, y0:y1, x0:x1] = block

    def bwd(g):
        gi = None
        if image.requires_grad:
            gi = g.copy()
            gi[:, :, y0:y1, x0:x1] = 0
        gp = None
        if patch.requires_grad:
            gblock = np.ascontiguousarray(g[:1, :, y0:y1, x0:x1])
            if n > 1:
                gblock = np.ascontiguousarray(g[:, :, y0:y1, x0:x1].sum(axis=0, keepdims=True))
            gp = backend.resample_bilinear_backward(gblock, ph, pw, sy, sx, oy, ox)
        return (gi, gp)

    clipped = BoundingBox.from_corners(float(x0), float(y0), float(x1), float(y1))
    return _result(out, (image, patch), bwd), clipped
