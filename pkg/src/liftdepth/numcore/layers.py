"""Small parameterized building blocks over the primitives in :mod:`ops`."""

from __future__ import annotations

import numpy as np

from . import ops
from .params import ParamStore
from .tensor import Tensor


class Conv2d:
    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, kernel: int = 1,
                 *, rng: np.random.Generator, stride: int = 1, bias: bool = True):
        self.weight = store.uniform(f"{name}.weight", (c_out, c_in, kernel, kernel),
                                    c_in * kernel * kernel, rng)
        self.bias = store.zeros(f"{name}.bias", (c_out,)) if bias else None
        self.stride = stride
        self.padding = kernel // 2
        self.identity = False  # test hook

    def __call__(self, x: Tensor) -> Tensor:
        if self.identity:
            return x
        y = ops.conv2d(x, self.weight, self.stride, self.padding)
        if self.bias is not None:
            y = y + ops.reshape(self.bias, (1, -1, 1, 1))
        return y


class Linear:
    """Affine map over the last axis."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 *, rng: np.random.Generator):
        self.weight = store.uniform(f"{name}.weight", (d_out, d_in), d_in, rng)
        self.bias = store.zeros(f"{name}.bias", (d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.matmul(x, ops.transpose(self.weight, (1, 0))) + self.bias


class MLP:
    """Two affine layers with a ReLU between them.

    ``pointwise=True`` applies the map to the channel axis of an NCHW tensor
    (1x1 convolutions); otherwise it acts on the last axis.
    """

    def __init__(self, store: ParamStore, name: str, d_in: int, d_hidden: int, d_out: int,
                 *, rng: np.random.Generator, pointwise: bool = False):
        if pointwise:
            self.l1 = Conv2d(store, f"{name}.0", d_in, d_hidden, 1, rng=rng)
            self.l2 = Conv2d(store, f"{name}.1", d_hidden, d_out, 1, rng=rng)
        else:
            self.l1 = Linear(store, f"{name}.0", d_in, d_hidden, rng=rng)
            self.l2 = Linear(store, f"{name}.1", d_hidden, d_out, rng=rng)
        self.identity = False  # test hook

    def __call__(self, x: Tensor) -> Tensor:
        if self.identity:
            return x
        return self.l2(ops.relu(self.l1(x)))

    def zero_last(self) -> None:
        self.l2.weight.data[...] = 0.0
        self.l2.bias.data[...] = 0.0


class GroupNorm:
    def __init__(self, store: ParamStore, name: str, channels: int, groups: int, eps: float = 1e-5):
        self.groups = groups
        self.eps = eps
        self.gamma = store.ones(f"{name}.gamma", (channels,))
        self.beta = store.zeros(f"{name}.beta", (channels,))
        self.identity = False  # test hook

    def __call__(self, x: Tensor) -> Tensor:
        if self.identity:
            return x
        return ops.group_norm(x, self.groups, self.gamma, self.beta, self.eps)
