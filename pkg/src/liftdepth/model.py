"""End-to-end model: CNN encoder, SF-DGR skips, DyReLU decoder with ER lifting, bin head."""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numcore as nc
from .binhead import BinPartition, BinWidthPredictor, LossParams, PQI, bin_centres, depth_from_probs, silog_loss
from .dgr import DecoderBlock, FrameSubspace, LiftingMap, SFDGR, construct_frame
from .er import ERCoefficients, ERLift
from .errors import ConfigError
from .numcore import Conv2d, GroupNorm, ParamStore, ShapeError, Tensor, lftd, ops


@dataclass(frozen=True)
class ModelConfig:
    height: int = 64
    width: int = 64
    stem_channels: int = 16
    enc_channels: tuple[int, int, int, int] = (32, 64, 128, 256)  # 1/4, 1/8, 1/16, 1/32
    dec_width: int = 128        # decoder width at 1/32; halves per upsample
    frame_n: int = 32
    frame_c: int = 8
    n_bins: int = 0             # 0 pairs one bin with every frame vector
    d_min: float = 0.5
    d_max: float = 11.0
    use_er: bool = True
    seed: int = 0

    @property
    def bins(self) -> int:
        return self.n_bins or self.frame_n

    @property
    def dec_channels(self) -> tuple[int, int, int, int]:
        """Decoder widths at 1/32, 1/16, 1/8, 1/4."""
        return tuple(max(self.dec_width >> i, 2) for i in range(4))

    def validate(self) -> "ModelConfig":
        if self.height % 32 or self.width % 32 or self.height <= 0 or self.width <= 0:
            raise ConfigError(f"input size {self.height}x{self.width} must be divisible by 32")
        if len(self.enc_channels) != 4 or min(self.enc_channels) < 2 or self.stem_channels < 2:
            raise ConfigError(f"encoder needs four stages of >= 2 channels, got {self.enc_channels}")
        if self.frame_n <= 0 or self.frame_c <= 0 or self.frame_n % self.frame_c:
            raise ConfigError(f"frame c={self.frame_c} must divide n={self.frame_n}")
        if not 2 <= self.bins <= self.frame_n:
            raise ConfigError(f"n_bins={self.bins} must lie in [2, frame_n={self.frame_n}]")
        if any(c % 2 for c in self.dec_channels):
            raise ConfigError(f"decoder widths {self.dec_channels} must be even")
        if not 0 < self.d_min < self.d_max:
            raise ConfigError(f"depth range must satisfy 0 < d_min < d_max, got {self.d_min}, {self.d_max}")
        return self

    @classmethod
    def tiny(cls, **kw) -> "ModelConfig":
        """32x32 preset small enough for full finite-difference checks."""
        base = dict(height=32, width=32, stem_channels=4, enc_channels=(4, 4, 8, 8),
                    dec_width=8, frame_n=8, frame_c=4)
        base.update(kw)
        return cls(**base)


def _norm_groups(c: int) -> int:
    return next(g for g in (8, 4, 2, 1) if c % g == 0 and c // g >= 2)


class _Stage:
    """3x3 conv, group norm, ReLU, 2x2 average-pool downsample."""

    def __init__(self, store, name, c_in, c_out, rng):
        self.conv = Conv2d(store, f"{name}.conv", c_in, c_out, 3, rng=rng)
        self.norm = GroupNorm(store, f"{name}.norm", c_out, _norm_groups(c_out))

    def __call__(self, x):
        return ops.avg_pool2(ops.relu(self.norm(self.conv(x))))


@dataclass
class ForwardTrace:
    encoder: list[Tensor]            # F_p at 1/4, 1/8, 1/16, 1/32
    dgr: list[Tensor]                # DGR^l at the same scales
    decoder: list[Tensor]            # DF^0 (1/32) .. DF^3 (1/4), after ER fusion
    er: list[ERCoefficients]         # one per decoder block (1/16, 1/8, 1/4)
    bins: BinPartition
    logits: Tensor                   # (N, K, H/4, W/4)
    probs: Tensor                    # (N, K, H, W)
    depth: Tensor                    # (N, H, W)

    def tensors(self) -> list[Tensor]:
        return [*self.encoder, *self.dgr, *self.decoder,
                *(c.alpha1 for c in self.er), *(c.alpha2 for c in self.er),
                self.bins.widths, self.bins.centres, self.logits, self.probs, self.depth]


class LiftDepthNet:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg.validate()
        rng = np.random.default_rng(cfg.seed)
        self.params = store = ParamStore()
        enc = cfg.enc_channels
        dec = cfg.dec_channels  # 1/32 .. 1/4

        self.stem = _Stage(store, "enc.stem", 3, cfg.stem_channels, rng)
        self.stages = []
        prev = cfg.stem_channels
        for i, c in enumerate(enc):
            self.stages.append(_Stage(store, f"enc.stage{i}", prev, c, rng))
            prev = c

        self.frame: FrameSubspace = construct_frame(cfg.frame_n, cfg.frame_c, store=store, rng=rng)
        # index 0 is 1/4 scale, matching the encoder order
        self.lifts = [SFDGR(store, f"sfdgr{i}", self.frame, enc[i], dec[3 - i], rng=rng) for i in range(4)]
        self.pqi = PQI(store, "pqi", dec[0], dec[0], rng=rng)
        self.bcp = BinWidthPredictor(store, "bcp", dec[0], cfg.bins, rng=rng)
        self.blocks = [DecoderBlock(store, f"dec{i}", dec[i - 1], dec[i], dec[i], rng=rng) for i in (1, 2, 3)]
        self.ers = [ERLift(store, f"er{i}", dec[i], rng=rng) for i in (1, 2, 3)]
        self.head = Conv2d(store, "head", dec[3], cfg.bins, 1, rng=rng)
        self.optimizer: Adam | None = None

    def encode(self, x: Tensor) -> list[Tensor]:
        x = self.stem(x - 0.5)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats

    def forward(self, image) -> ForwardTrace:
        cfg = self.cfg
        x = np.asarray(image, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != (3, cfg.height, cfg.width):
            raise ShapeError(f"expected images of shape (N, 3, {cfg.height}, {cfg.width}), got {x.shape}")
        if x.size and (x.min() < 0 or x.max() > 1):
            raise ValueError("image values must lie in [0, 1]")

        feats = self.encode(nc.Tensor(x))
        dgr = [lift(f) for lift, f in zip(self.lifts, feats)]
        high = dgr[3]
        widths = self.bcp(high)
        centres = bin_centres(widths, cfg.d_min, cfg.d_max)

        df = self.pqi(high)
        decoder, er = [df], []
        for i, (block, lift) in enumerate(zip(self.blocks, self.ers)):
            df = block(df, dgr[2 - i])
            if cfg.use_er:
                df, coeffs = lift(df)
                er.append(coeffs)
            decoder.append(df)

        logits = self.head(df)
        probs = ops.softmax(ops.resize_bilinear(logits, (cfg.height, cfg.width)), axis=1)
        depth = depth_from_probs(probs, centres)
        return ForwardTrace(feats, dgr, decoder, er, BinPartition(cfg.d_min, cfg.d_max, widths, centres),
                            logits, probs, depth)

    __call__ = forward

    def predict(self, image) -> np.ndarray:
        with nc.no_grad():
            return self.forward(image).depth.data


def build_model(cfg: ModelConfig) -> LiftDepthNet:
    return LiftDepthNet(cfg)


def forward(model: LiftDepthNet, image) -> ForwardTrace:
    return model.forward(image)


# ---------------------------------------------------------------- training

class Adam:
    def __init__(self, params: ParamStore, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1**self.t, 1.0 - b2**self.t
        for k, p in self.params.items():
            g = p.grad
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p.data -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class Batch:
    images: np.ndarray  # (N, 3, H, W)
    depths: np.ndarray  # (N, H, W)
    masks: np.ndarray   # (N, H, W) bool

    @classmethod
    def from_samples(cls, samples: Sequence, flips: Sequence[bool] | None = None) -> "Batch":
        flips = flips or [False] * len(samples)
        pick = [(s.image[..., ::-1], s.depth[:, ::-1], s.mask[:, ::-1]) if f else (s.image, s.depth, s.mask)
                for s, f in zip(samples, flips)]
        return cls(*(np.ascontiguousarray(np.stack(arrs)) for arrs in zip(*pick)))


def batch_loss(model: LiftDepthNet, batch: Batch, lp: LossParams = LossParams()) -> Tensor:
    if not batch.masks.any():
        raise ValueError("every sample in the batch has an empty mask")
    return silog_loss(model.forward(batch.images).depth, batch.depths, batch.masks, lp)


def train_step(model: LiftDepthNet, batch: Batch, lr: float, lp: LossParams = LossParams()) -> float:
    """One SILog + Adam step; returns the loss before the update."""
    if model.optimizer is None:
        model.optimizer = Adam(model.params)
    model.params.zero_grad()
    loss = batch_loss(model, batch, lp)
    nc.backward(loss)
    model.optimizer.step(lr)
    return loss.item()


def linear_lr(step: int, total: int, start: float, end: float) -> float:
    if total <= 1:
        return start
    return start + (end - start) * step / (total - 1)


@dataclass
class LogEntry:
    step: int
    loss: float
    lr: float

    def line(self) -> str:
        return f"{self.step} {self.loss:.9f} {self.lr:.9g}"


def fit(model: LiftDepthNet, samples: Sequence, epochs: int, batch_size: int, lr_start: float,
        lr_end: float, seed: int = 0, flip: bool = True,
        on_step: Callable[[LogEntry], None] | None = None,
        lp: LossParams = LossParams()) -> list[LogEntry]:
    """Shuffled mini-batch training with linearly decayed learning rate."""
    rng = np.random.default_rng(seed)
    per_epoch = -(-len(samples) // batch_size) if samples else 0
    total = epochs * per_epoch
    log, step = [], 0
    for _ in range(epochs):
        order = rng.permutation(len(samples))
        flips = rng.random(len(samples)) < 0.5 if flip else np.zeros(len(samples), dtype=bool)
        for b in range(per_epoch):
            idx = order[b * batch_size:(b + 1) * batch_size]
            batch = Batch.from_samples([samples[i] for i in idx], [bool(flips[i]) for i in idx])
            lr = linear_lr(step, total, lr_start, lr_end)
            entry = LogEntry(step, train_step(model, batch, lr, lp), lr)
            log.append(entry)
            if on_step is not None:
                on_step(entry)
            step += 1
    return log


# ---------------------------------------------------------------- lifting check

@dataclass
class LiftingReport:
    max_abs_error: float
    tol: float = 1e-10
    per_image: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_abs_error <= self.tol


def lifting_consistency(model: LiftDepthNet, trace: ForwardTrace, tol: float = 1e-10) -> LiftingReport:
    """Check g(sum_k p_k z_k) == sum_k p_k bin_k == the traced depth, per pixel."""
    frame = model.frame
    probs = trace.probs.data
    centres = trace.bins.centres.data
    errs = []
    for n in range(probs.shape[0]):
        g = LiftingMap(frame.vectors.data, frame.groups, centres[n])
        p = np.moveaxis(probs[n], 0, -1)  # (H, W, K)
        lifted = g(g.combine(p))
        direct = p @ centres[n]
        errs.append(float(max(np.abs(lifted - direct).max(), np.abs(lifted - trace.depth.data[n]).max())))
    return LiftingReport(max(errs, default=0.0), tol, errs)


# ---------------------------------------------------------------- checkpoints

class CheckpointError(ValueError):
    pass


def save_checkpoint(params: ParamStore, directory) -> None:
    """``manifest.txt`` (name, shape, byte offset per line) plus ``params.lftd``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    blob, lines, offset = io.BytesIO(), [], 0
    for name, p in params.items():
        lines.append(f"{name} {'x'.join(map(str, p.shape)) or '-'} {offset}")
        offset += lftd.write_stream(blob, p.data)
    (d / "params.lftd").write_bytes(blob.getvalue())
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_checkpoint(params: ParamStore, directory) -> None:
    d = Path(directory)
    try:
        manifest = (d / "manifest.txt").read_text().splitlines()
        blob = (d / "params.lftd").read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint in {d}: {exc}") from None
    entries = [line.split() for line in manifest if line.strip()]
    names = [e[0] for e in entries]
    if names != params.names():
        missing = set(params.names()) ^ set(names)
        raise CheckpointError(f"checkpoint parameter names differ: {sorted(missing)[:5]}")
    state = {}
    for name, shape_s, off in entries:
        shape = () if shape_s == "-" else tuple(int(v) for v in shape_s.split("x"))
        if shape != params[name].shape:
            raise CheckpointError(f"shape mismatch for {name}: checkpoint {shape}, model {params[name].shape}")
        try:
            arr, _ = lftd.decode_from(blob, int(off))
        except lftd.LFTDFormatError as exc:
            raise CheckpointError(f"{name}: {exc}") from None
        if arr.shape != shape:
            raise CheckpointError(f"record for {name} has shape {arr.shape}, manifest says {shape}")
        state[name] = arr.astype(np.float64)
    params.load_state(state)


def with_er(cfg: ModelConfig, enabled: bool) -> ModelConfig:
    return replace(cfg, use_er=enabled)
