"""Edge-aware representation (ER) subspace and DF-ER lifting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ConfigError
from .numcore import Conv2d, ParamStore, ShapeError, Tensor, ops


@dataclass
class ERSubspace:
    e1: Tensor  # edge vector, (N,)
    e2: Tensor  # non-edge vector, (N,)

    @property
    def channels(self) -> int:
        return self.e1.shape[0]


@dataclass
class ERCoefficients:
    alpha1: Tensor  # (B, 1, H, W), in [0, 1]
    alpha2: Tensor  # 1 - alpha1


def alpha_from_logits(logits) -> ERCoefficients:
    """Channel softmax per pixel; alpha1 is the share of mass in the first half of the channels.

    Normalizing the two half-sums against each other keeps alpha1 inside [0, 1]
    even when the rounded probabilities sum to slightly more than one.
    """
    logits = nc.as_tensor(logits)
    n = logits.shape[1]
    if n % 2:
        raise ConfigError(f"ER coefficient prediction needs an even channel count, got {n}")
    probs = ops.softmax(logits, axis=1)
    first = ops.sum(probs[:, : n // 2], axis=1, keepdims=True)
    alpha1 = first / (first + ops.sum(probs[:, n // 2 :], axis=1, keepdims=True))
    return ERCoefficients(alpha1, 1.0 - alpha1)


def er_feature(ers: ERSubspace, coeffs: ERCoefficients) -> Tensor:
    """F_e = alpha1 * e1 + alpha2 * e2 at every pixel."""
    shape = (1, ers.channels, 1, 1)
    return coeffs.alpha1 * ops.reshape(ers.e1, shape) + coeffs.alpha2 * ops.reshape(ers.e2, shape)


def er_transform(F_dec, ers: ERSubspace, coeffs: ERCoefficients) -> Tensor:
    """Fuse the ER feature back into the decoder feature (additively)."""
    F_dec = nc.as_tensor(F_dec)
    if F_dec.ndim != 4 or F_dec.shape[1] != ers.channels:
        raise ShapeError(f"ER vectors have {ers.channels} channels, feature is {F_dec.shape}")
    return F_dec + er_feature(ers, coeffs)


class ERLift:
    """ER-CP (three 3x3 convolutions) plus one level's ER subspace."""

    def __init__(self, store: ParamStore, name: str, channels: int, *, rng: np.random.Generator):
        if channels % 2:
            raise ConfigError(f"ER lifting needs an even channel count, got {channels}")
        self.channels = channels
        self.ecn = [Conv2d(store, f"{name}.ecn{i}", channels, channels, 3, rng=rng) for i in range(3)]
        self.subspace = ERSubspace(
            store.uniform(f"{name}.e_edge", (channels,), channels, rng),
            store.uniform(f"{name}.e_nonedge", (channels,), channels, rng),
        )

    def logits(self, F_dec: Tensor) -> Tensor:
        x = self.ecn[0](F_dec)
        x = self.ecn[1](ops.relu(x))
        return self.ecn[2](ops.relu(x))

    def coefficients(self, F_dec: Tensor) -> ERCoefficients:
        return alpha_from_logits(self.logits(F_dec))

    def __call__(self, F_dec: Tensor) -> tuple[Tensor, ERCoefficients]:
        coeffs = self.coefficients(F_dec)
        return er_transform(F_dec, self.subspace, coeffs), coeffs


def er_coefficients(F_dec, module: ERLift) -> ERCoefficients:
    return module.coefficients(nc.as_tensor(F_dec))
