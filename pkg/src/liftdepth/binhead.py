"""Adaptive-bin depth head: global query feature, bin widths, centres, depth, SILog."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ConfigError
from .numcore import MLP, Conv2d, ParamStore, ShapeError, Tensor, ops

PSP_GRIDS = (1, 2, 3, 6)


@dataclass(frozen=True)
class LossParams:
    alpha: float = 10.0
    lam: float = 0.85

    def __post_init__(self):
        if not self.alpha > 0 or not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"invalid SILog parameters alpha={self.alpha}, lambda={self.lam}")


@dataclass
class BinPartition:
    d_min: float
    d_max: float
    widths: Tensor   # (N, K), rows sum to 1
    centres: Tensor  # (N, K)

    @property
    def delta_d(self) -> float:
        return self.d_max - self.d_min

    @property
    def n_bins(self) -> int:
        return self.widths.shape[-1]


class PQI:
    """Pyramid-pooled global feature used as the decoder's initial query.

    Grids larger than the input collapse to the input size.
    """

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int,
                 *, rng: np.random.Generator, grids=PSP_GRIDS):
        self.grids = tuple(grids)
        branch = max(c_in // len(self.grids), 1)
        self.proj = [Conv2d(store, f"{name}.proj{s}", c_in, branch, 1, rng=rng) for s in self.grids]
        self.fuse = Conv2d(store, f"{name}.fuse", c_in + branch * len(self.grids), c_out, 1, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        parts = [x]
        for s, proj in zip(self.grids, self.proj):
            pooled = ops.adaptive_avg_pool(x, (min(s, h), min(s, w)))
            parts.append(ops.resize_bilinear(proj(pooled), (h, w)))
        return self.fuse(ops.concat(parts, axis=1))


def pqi_global_feature(dgr_high, module: PQI) -> Tensor:
    return module(nc.as_tensor(dgr_high))


class BinWidthPredictor:
    """Global average pooling, then an MLP to n_bins logits, softmax-normalized."""

    def __init__(self, store: ParamStore, name: str, c_in: int, n_bins: int,
                 *, rng: np.random.Generator):
        self.n_bins = n_bins
        self.mlp = MLP(store, name, c_in, c_in, n_bins, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        n, c = x.shape[:2]
        return ops.softmax(self.mlp(ops.reshape(ops.global_avg_pool(x), (n, c))), axis=-1)


def predict_bin_widths(dgr_high, module: BinWidthPredictor) -> Tensor:
    return module(nc.as_tensor(dgr_high))


def bin_centres(widths, d_min: float, d_max: float) -> Tensor:
    """bin_k = d_min + (d_max - d_min) * (b_k / 2 + sum_{j<k} b_j), along the last axis."""
    widths = nc.as_tensor(widths)
    if np.any(widths.data < 0):
        raise ValueError("bin widths must be nonnegative")
    if np.any(np.abs(widths.data.sum(axis=-1) - 1.0) > 1e-6):
        raise ValueError("bin widths must sum to 1")
    k = widths.shape[-1]
    before = np.tril(np.ones((k, k)), -1).T  # column k sums widths j < k
    w2 = widths if widths.ndim >= 2 else ops.reshape(widths, (1, k))
    cum = ops.matmul(w2, before)
    centres = d_min + (d_max - d_min) * (0.5 * w2 + cum)
    return centres if widths.ndim >= 2 else ops.reshape(centres, (k,))


def depth_from_probs(probs, centres) -> Tensor:
    """d_i = sum_k p_ik * bin_k.

    The bin axis is the last axis of ``centres``; ``probs`` carries the same
    leading axes followed by any number of spatial axes.
    """
    probs, centres = nc.as_tensor(probs), nc.as_tensor(centres)
    axis = centres.ndim - 1
    if probs.shape[:centres.ndim] != centres.shape:
        raise ShapeError(f"probabilities {probs.shape} do not match centres {centres.shape}")
    if np.any(np.abs(probs.data.sum(axis=axis) - 1.0) > 1e-4):
        raise ValueError("probabilities are not normalized over bins")
    extra = probs.ndim - centres.ndim
    c = ops.reshape(centres, centres.shape + (1,) * extra)
    return ops.sum(probs * c, axis=axis)


def silog_loss(pred, gt, mask=None, lp: LossParams = LossParams()) -> Tensor:
    """alpha * sqrt(mean(dl^2) - lambda * mean(dl)^2) over masked pixels, dl = log d - log d*."""
    pred = nc.as_tensor(pred)
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape != pred.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    mask = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    m = int(mask.sum())
    if m == 0:
        raise ValueError("SILog loss needs at least one valid pixel")
    if np.any(gt[mask] <= 0) or np.any(pred.data[mask] <= 0):
        raise ValueError("depths under the mask must be positive")
    dl = ops.log(pred[mask]) - np.log(gt[mask])
    mean_sq = ops.sum(dl * dl) * (1.0 / m)
    total = ops.sum(dl)
    inside = mean_sq - (lp.lam / m**2) * (total * total)
    return lp.alpha * ops.sqrt(ops.maximum(inside, 0.0))
