"""Minimal float64 tensor engine with reverse-mode autodiff."""

from . import lftd, ops
from .gradcheck import GradCheckReport, ParamCheck, finite_diff_check, relative_error
from .layers import MLP, Conv2d, GroupNorm, Linear
from .ops import (
    add, adaptive_avg_pool, avg_pool2, concat, conv2d, div, einsum, exp,
    global_avg_pool, group_norm, inner_product, log, matmul, maximum, mean, mul,
    relu, reshape, resize_bilinear, softmax, sqrt, stack, sub, transpose, upsample2,
)
from .params import ParamStore
from .tensor import Graph, ShapeError, Tensor, as_tensor, backward, is_grad_enabled, no_grad

__all__ = [
    "Conv2d", "GradCheckReport", "Graph", "GroupNorm", "Linear", "MLP", "ParamCheck",
    "ParamStore", "ShapeError", "Tensor", "adaptive_avg_pool", "add", "as_tensor",
    "avg_pool2", "backward", "concat", "conv2d", "div", "einsum", "exp",
    "finite_diff_check", "global_avg_pool", "group_norm", "inner_product",
    "is_grad_enabled", "lftd", "log", "matmul", "maximum", "mean", "mul", "no_grad",
    "ops", "relative_error", "relu", "reshape", "resize_bilinear", "softmax", "sqrt",
    "stack", "sub", "transpose", "upsample2",
]
