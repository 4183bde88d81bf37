"""Frame-based depth-oriented representation (DGR) and SF-DGR lifting.

A :class:`FrameSubspace` holds ``n`` learned vectors of dimension ``c``,
split into ``r = n / c`` groups.  :class:`SFDGR` projects encoder features
onto each group through two small MLPs, rebuilds the per-group combination of
frame vectors, normalizes and fuses the groups, and adds a transformed skip
of the input.  One frame instance is shared by every scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ConfigError
from .numcore import MLP, Conv2d, GroupNorm, ParamStore, ShapeError, Tensor, ops

RANK_TOL = 1e-8


@dataclass
class FrameSubspace:
    vectors: Tensor  # (n, c), row k is e_k; group j owns rows j*c .. (j+1)*c - 1
    groups: int

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def c(self) -> int:
        return self.vectors.shape[1]

    def group(self, j: int) -> Tensor:
        c = self.c
        return self.vectors[j * c:(j + 1) * c]

    def group_ranks(self, tol: float = RANK_TOL) -> list[int]:
        ranks = []
        for j in range(self.groups):
            sv = np.linalg.svd(self.vectors.data[j * self.c:(j + 1) * self.c], compute_uv=False)
            ranks.append(int((sv > tol).sum()))
        return ranks


def construct_frame(n: int, c: int, seed: int | None = None, *, store: ParamStore | None = None,
                    rng: np.random.Generator | None = None, name: str = "frame",
                    orthonormal: bool = False) -> FrameSubspace:
    """Create ``n`` learnable frame vectors of dimension ``c`` in ``r = n / c`` groups.

    ``orthonormal=True`` is a test hook that makes every group an orthonormal
    basis of R^c.
    """
    if n <= 0 or c <= 0 or n % c:
        raise ConfigError(f"frame size n={n} must be a positive multiple of c={c}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    store = store if store is not None else ParamStore()
    if orthonormal:
        blocks = [np.linalg.qr(rng.standard_normal((c, c)))[0].T for _ in range(n // c)]
        vectors = store.add(name, np.concatenate(blocks, axis=0))
    else:
        vectors = store.uniform(name, (n, c), c, rng)
    fs = FrameSubspace(vectors, n // c)
    ranks = fs.group_ranks()
    if min(ranks) < c:
        raise ConfigError(f"frame group is rank-deficient at construction: ranks {ranks}")
    return fs


def frame_bounds(fs) -> tuple[float, float]:
    """Extreme eigenvalues (A, B) of the frame operator S = sum_k e_k e_k^T."""
    e = fs.vectors.data if isinstance(fs, FrameSubspace) else np.asarray(fs, dtype=np.float64)
    eig = np.linalg.eigvalsh(e.T @ e)
    return max(float(eig[0]), 0.0), float(eig[-1])


class LiftingMap:
    """Linear map g from the covering space to depth with g(z_k) = bin_k.

    The covering space is R^n, the direct sum of the r group spaces.  Bin k is
    paired with frame vector e_{i,j} (k = j*c + i) embedded in block j; the
    embedded vectors are linearly independent because each group has full
    rank, so g is well defined for any bin values.
    """

    def __init__(self, vectors: np.ndarray, groups: int, centres: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float64)
        centres = np.asarray(centres, dtype=np.float64)
        n, c = vectors.shape
        k = centres.shape[0]
        if k > n:
            raise ConfigError(f"{k} bins cannot pair with {n} frame vectors")
        self.centres = centres
        self.directions = np.zeros((k, n))
        self.weights = np.zeros(n)
        for j in range(groups):
            lo, hi = j * c, min((j + 1) * c, k)
            if lo >= hi:
                break
            block = vectors[lo:hi]
            self.directions[lo:hi, j * c:(j + 1) * c] = block
            sol, *_ = np.linalg.lstsq(block, centres[lo:hi], rcond=None)
            self.weights[j * c:(j + 1) * c] = sol

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) @ self.weights

    def combine(self, coeffs: np.ndarray) -> np.ndarray:
        """sum_k coeffs[..., k] * z_k."""
        return np.asarray(coeffs) @ self.directions


@dataclass
class DgrCoefficients:
    alpha: Tensor  # (N, r, c, H, W)

    @property
    def groups(self) -> int:
        return self.alpha.shape[1]


class SFDGR:
    """SF-DGR lifting for one scale, bound to a shared frame.

    ``sf``/``dgr``/``norm``/``fuse`` are per-group lists; ``fc`` and ``fp``
    act on the fused feature and the input skip.  Every submodule exposes an
    ``identity`` switch for tests.
    """

    def __init__(self, store: ParamStore, name: str, frame: FrameSubspace, c_in: int, c_out: int,
                 *, rng: np.random.Generator):
        r, c = frame.groups, frame.c
        self.frame = frame
        self.c_in, self.c_out = c_in, c_out
        self.sf = [MLP(store, f"{name}.sf{j}", c_in, c, c, rng=rng, pointwise=True) for j in range(r)]
        self.dgr = [MLP(store, f"{name}.dgr{j}", c, c, c, rng=rng) for j in range(r)]
        self.norm = [GroupNorm(store, f"{name}.norm{j}", c, 1) for j in range(r)]
        self.fuse = [Conv2d(store, f"{name}.fuse{j}", c, c_out, 1, rng=rng) for j in range(r)]
        self.fc = MLP(store, f"{name}.fc", c_out, 2 * c_out, c_out, rng=rng, pointwise=True)
        self.fp = Conv2d(store, f"{name}.fp", c_in, c_out, 1, rng=rng)

    def _check(self, F_p: Tensor) -> None:
        if F_p.ndim != 4 or F_p.shape[1] != self.c_in:
            raise ShapeError(f"SF-DGR expects (N, {self.c_in}, H, W), got {F_p.shape}")

    def _group_alpha(self, F_p: Tensor, j: int) -> Tensor:
        u = self.sf[j](F_p)                      # (N, c, H, W) unified-space features
        v = self.dgr[j](self.frame.group(j))     # (c, c) transformed frame vectors, row i
        return ops.einsum("nkhw,ik->nihw", u, v)

    def coefficients(self, F_p: Tensor) -> DgrCoefficients:
        self._check(F_p)
        return DgrCoefficients(ops.stack([self._group_alpha(F_p, j) for j in range(self.frame.groups)], axis=1))

    def lift(self, F_p: Tensor) -> tuple[Tensor, DgrCoefficients]:
        self._check(F_p)
        alphas, fused = [], None
        for j in range(self.frame.groups):
            alpha = self._group_alpha(F_p, j)
            alphas.append(alpha)
            combo = ops.einsum("nihw,ik->nkhw", alpha, self.frame.group(j))
            y = self.fuse[j](self.norm[j](combo))
            fused = y if fused is None else fused + y
        out = self.fc(fused) + self.fp(F_p)
        return out, DgrCoefficients(ops.stack(alphas, axis=1))

    def __call__(self, F_p: Tensor) -> Tensor:
        return self.lift(F_p)[0]


def dgr_coefficients(F_p, transform: SFDGR) -> DgrCoefficients:
    return transform.coefficients(nc.as_tensor(F_p))


def sf_dgr_transform(F_p, transform: SFDGR) -> Tensor:
    return transform(nc.as_tensor(F_p))


def dyrelu(x, a1, b1, a2, b2) -> Tensor:
    """max(a1*x + b1, a2*x + b2) with broadcasting coefficients."""
    x = nc.as_tensor(x)
    return ops.maximum(a1 * x + b1, a2 * x + b2)


class DyReLU:
    """Channelwise dynamic ReLU; starts as a plain ReLU."""

    def __init__(self, store: ParamStore, name: str, channels: int, *, rng: np.random.Generator,
                 reduction: int = 4):
        self.channels = channels
        self.mlp = MLP(store, name, channels, max(channels // reduction, 2), 4 * channels, rng=rng)
        self.mlp.zero_last()
        self.fixed: tuple[float, float, float, float] | None = None  # test hook

    def coefficients(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        n, c = x.shape[:2]
        if self.fixed is not None:
            return tuple(nc.Tensor(v) for v in self.fixed)
        o = ops.reshape(self.mlp(ops.reshape(ops.global_avg_pool(x), (n, c))), (n, 4, c, 1, 1))
        return 1.0 + o[:, 0], o[:, 1], o[:, 2], o[:, 3]

    def __call__(self, x: Tensor) -> Tensor:
        return dyrelu(x, *self.coefficients(x))


class DecoderBlock:
    """DF^l = ConvDyReLU(ConvDyReLU(Cat(DF^{l-1}, DGR^l)))."""

    def __init__(self, store: ParamStore, name: str, c_prev: int, c_skip: int, c_out: int,
                 *, rng: np.random.Generator):
        self.conv1 = Conv2d(store, f"{name}.conv1", c_prev + c_skip, c_out, 3, rng=rng)
        self.act1 = DyReLU(store, f"{name}.act1", c_out, rng=rng)
        self.conv2 = Conv2d(store, f"{name}.conv2", c_out, c_out, 3, rng=rng)
        self.act2 = DyReLU(store, f"{name}.act2", c_out, rng=rng)

    def __call__(self, df_prev: Tensor, dgr: Tensor) -> Tensor:
        hp, wp = df_prev.shape[-2:]
        h, w = dgr.shape[-2:]
        if (2 * hp, 2 * wp) == (h, w):
            df_prev = ops.upsample2(df_prev)
        elif (hp, wp) != (h, w):
            raise ShapeError(f"decoder input {df_prev.shape} cannot be aligned with {dgr.shape}")
        x = ops.concat([df_prev, dgr], axis=1)
        return self.act2(self.conv2(self.act1(self.conv1(x))))


def decoder_block(df_prev, dgr, block: DecoderBlock) -> Tensor:
    return block(nc.as_tensor(df_prev), nc.as_tensor(dgr))
