"""Differentiable primitives.

All functions accept Tensors or array-likes and return Tensors.  Binary
elementwise ops broadcast with NumPy rules; gradients are summed back to the
operand shapes.  Image tensors are laid out NCHW.
"""

from __future__ import annotations

import builtins
import math
from functools import lru_cache

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, make

__all__ = [
    "add", "sub", "mul", "div", "neg", "exp", "log", "sqrt", "relu", "maximum",
    "sum", "mean", "reshape", "transpose", "getitem", "concat", "stack",
    "matmul", "einsum", "inner_product", "softmax", "conv2d", "avg_pool2",
    "separable", "resize_bilinear", "upsample2", "adaptive_avg_pool",
    "global_avg_pool", "group_norm", "bilinear_matrix", "adaptive_pool_matrix",
]


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data + b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data - b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data * b.data, (a, b),
                lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def back(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return make(out, (a, b), back, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def back(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, 0.5 * g / safe, 0.0),)

    return make(out, (a,), back, "sqrt")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data
    out = np.where(pick_a, a.data, b.data)
    return make(out, (a, b),
                lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)),
                "maximum")


# ---------------------------------------------------------------- reductions / shape

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(ax % ndim for ax in axes)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return make(np.asarray(out, dtype=np.float64), (a,), back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = a.size if axes is None else math.prod(a.shape[ax] for ax in axes)
    return mul(sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def back(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        return (z,)

    return make(np.array(a.data[idx], dtype=np.float64), (a,), back, "getitem")


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
            t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise ShapeError(f"concat shape mismatch: {[t.shape for t in ts]} along axis {ax}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def back(g):
        return tuple(
            g[(slice(None),) * ax + (slice(int(lo), int(hi)),)]
            for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return make(np.concatenate([t.data for t in ts], axis=ax), ts, back, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim
    return make(out, ts, lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(ts))), "stack")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands of rank >= 2; use inner_product for vectors")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make(a.data @ b.data, (a, b), back, "matmul")


def einsum(spec: str, a, b) -> Tensor:
    """Two-operand einsum; every input index must survive in the other operand or the output."""
    a, b = as_tensor(a), as_tensor(b)
    ins, out_s = spec.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for s, other in ((sa, sb), (sb, sa)):
        if not set(s) <= set(other) | set(out_s):
            raise ValueError(f"einsum spec {spec!r} drops an index that needs broadcasting")
    out = np.einsum(spec, a.data, b.data, optimize=True)

    def back(g):
        ga = np.einsum(f"{out_s},{sb}->{sa}", g, b.data, optimize=True)
        gb = np.einsum(f"{sa},{out_s}->{sb}", a.data, g, optimize=True)
        return ga, gb

    return make(np.asarray(out, dtype=np.float64), (a, b), back, "einsum")


def inner_product(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"inner_product needs equal-length vectors, got {a.shape} and {b.shape}")
    out = np.asarray(np.dot(a.data, b.data), dtype=np.float64)
    return make(out, (a, b), lambda g: (g * b.data, g * a.data), "inner_product")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make(out, (a,), back, "softmax")


# ---------------------------------------------------------------- convolution / pooling

def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an NCHW (or CHW) input with an (O, C, k, k) kernel."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim == 3:
        batched = conv2d(reshape(x, (1,) + x.shape), kernel, stride, padding)
        return reshape(batched, batched.shape[1:])
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OCkk kernel, got {x.shape}, {kernel.shape}")
    n, c, h, w = x.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {kc}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel extent must be odd, got {kh}x{kw}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    w2 = kernel.data.reshape(o, -1)

    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        xf = x.data.reshape(n, c, h * w)
        out = (w2 @ xf).reshape(n, o, h, w)

        def back1(g):
            gf = g.reshape(n, o, h * w)
            gx = (w2.T @ gf).reshape(x.shape)
            gk = np.einsum("noq,ncq->oc", gf, xf, optimize=True).reshape(kernel.shape)
            return gx, gk

        return make(out, (x, kernel), back1, "conv2d")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = (cols @ w2.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gk = (g2.T @ cols).reshape(kernel.shape)
        dcols = (g2 @ w2).reshape(n, ho, wo, c, kh, kw)
        gxp = np.zeros(xp.shape)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return gx, gk

    return make(np.ascontiguousarray(out), (x, kernel), back, "conv2d")


def avg_pool2(x) -> Tensor:
    """Non-overlapping 2x2 average pooling (H and W must be even)."""
    x = as_tensor(x)
    *lead, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even spatial extents, got {h}x{w}")
    out = x.data.reshape(*lead, h // 2, 2, w // 2, 2).mean(axis=(-3, -1))

    def back(g):
        return (np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) * 0.25,)

    return make(out, (x,), back, "avg_pool2")


def separable(x, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Apply fixed linear maps to the last two axes: ``rows @ x @ cols.T``."""
    x = as_tensor(x)
    if rows.shape[1] != x.shape[-2] or cols.shape[1] != x.shape[-1]:
        raise ShapeError(f"separable map {rows.shape}/{cols.shape} does not fit input {x.shape}")
    out = rows @ x.data @ cols.T
    return make(out, (x,), lambda g: (rows.T @ (g @ cols),), "separable")


@lru_cache(maxsize=256)
def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Half-pixel (align_corners=False) linear interpolation weights, shape (n_out, n_in)."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for o in range(n_out):
        src = builtins.max((o + 0.5) * scale - 0.5, 0.0)
        i0 = builtins.min(int(math.floor(src)), n_in - 1)
        i1 = builtins.min(i0 + 1, n_in - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    m.flags.writeable = False
    return m


@lru_cache(maxsize=256)
def adaptive_pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Adaptive average pooling weights with floor/ceil bin edges, shape (n_out, n_in)."""
    m = np.zeros((n_out, n_in))
    for o in range(n_out):
        lo = (o * n_in) // n_out
        hi = -((-(o + 1) * n_in) // n_out)
        m[o, lo:hi] = 1.0 / (hi - lo)
    m.flags.writeable = False
    return m


def resize_bilinear(x, size: tuple[int, int]) -> Tensor:
    x = as_tensor(x)
    h, w = x.shape[-2:]
    return separable(x, bilinear_matrix(h, size[0]), bilinear_matrix(w, size[1]))


def upsample2(x) -> Tensor:
    x = as_tensor(x)
    h, w = x.shape[-2:]
    return resize_bilinear(x, (2 * h, 2 * w))


def adaptive_avg_pool(x, size: tuple[int, int]) -> Tensor:
    x = as_tensor(x)
    h, w = x.shape[-2:]
    return separable(x, adaptive_pool_matrix(h, size[0]), adaptive_pool_matrix(w, size[1]))


def global_avg_pool(x) -> Tensor:
    """Mean over the two spatial axes, keeping them as size-1 axes."""
    return mean(x, axis=(-2, -1), keepdims=True)


def group_norm(x, groups: int, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    """Normalize NCHW input over (C/groups, H, W) per sample, then apply a per-channel affine."""
    x = as_tensor(x)
    n, c = x.shape[:2]
    if groups <= 0 or c % groups:
        raise ShapeError(f"group_norm: {groups} groups do not divide {c} channels")
    xr = reshape(x, (n, groups, -1))
    centred = xr - mean(xr, axis=2, keepdims=True)
    var = mean(centred * centred, axis=2, keepdims=True)
    y = reshape(centred / sqrt(var + eps), x.shape)
    bshape = (1, c) + (1,) * (x.ndim - 2)
    if gamma is not None:
        y = y * reshape(gamma, bshape)
    if beta is not None:
        y = y + reshape(beta, bshape)
    return y
