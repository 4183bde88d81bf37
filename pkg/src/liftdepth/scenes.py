"""Synthetic fronto-parallel scenes with exact depth, plus PFM/PPM file IO."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    height: int = 64
    width: int = 64
    objects: tuple[int, int] = (1, 3)
    depth_range: tuple[float, float] = (1.0, 10.0)
    ambient: float = 0.0       # shading = ambient + (1 - ambient) * d_near / depth
    albedo_min: float = 0.2    # lower bound of the non-dominant albedo channels
    grid: int = 4              # rectangle corners snap to multiples of this

    def __post_init__(self):
        near, far = self.depth_range
        if not near > 0 or not far > near:
            raise ValueError(f"depth range must satisfy 0 < near < far, got {self.depth_range}")
        if self.objects[0] < 0 or self.objects[1] < self.objects[0]:
            raise ValueError(f"bad object count range {self.objects}")
        if self.grid < 1 or self.height % self.grid or self.width % self.grid:
            raise ValueError(f"grid {self.grid} must divide the image size")


@dataclass(frozen=True)
class Rect:
    top: int
    left: int
    bottom: int  # exclusive
    right: int   # exclusive
    depth: float
    albedo: tuple[float, float, float] = (1.0, 1.0, 1.0)


@dataclass
class SceneSample:
    image: np.ndarray  # (3, H, W) in [0, 1]
    depth: np.ndarray  # (H, W) metres
    mask: np.ndarray   # (H, W) bool
    rects: list[Rect] = field(default_factory=list)


def _albedo(rng: np.random.Generator, lo: float) -> tuple[float, float, float]:
    a = rng.uniform(lo, 1.0, size=3)
    a[rng.integers(3)] = 1.0
    return tuple(float(v) for v in a)


def render(height: int, width: int, background_depth: float, rects: list[Rect],
           background_albedo=(1.0, 1.0, 1.0), near: float = 1.0, ambient: float = 0.0) -> SceneSample:
    """Painter's algorithm: far-to-near, so the nearest surface wins each pixel."""
    depth = np.full((height, width), float(background_depth))
    albedo = np.empty((3, height, width))
    albedo[:] = np.asarray(background_albedo, dtype=np.float64)[:, None, None]
    for r in sorted(rects, key=lambda r: -r.depth):
        depth[r.top:r.bottom, r.left:r.right] = r.depth
        albedo[:, r.top:r.bottom, r.left:r.right] = np.asarray(r.albedo)[:, None, None]
    shade = ambient + (1.0 - ambient) * near / depth
    image = np.clip(albedo * shade[None], 0.0, 1.0)
    return SceneSample(image, depth, np.ones((height, width), dtype=bool), list(rects))


def generate_scene(spec: SceneSpec) -> SceneSample:
    rng = np.random.default_rng(spec.seed)
    near, far = spec.depth_range
    g = spec.grid
    gh, gw = spec.height // g, spec.width // g
    background = float(rng.uniform(near + 0.6 * (far - near), far))
    bg_albedo = _albedo(rng, spec.albedo_min)
    rects = []
    for _ in range(int(rng.integers(spec.objects[0], spec.objects[1] + 1))):
        h = int(rng.integers(max(gh // 8, 1), max(gh // 2, 1) + 1))
        w = int(rng.integers(max(gw // 8, 1), max(gw // 2, 1) + 1))
        top = int(rng.integers(0, gh - h + 1))
        left = int(rng.integers(0, gw - w + 1))
        d = float(rng.uniform(near, background))
        rects.append(Rect(top * g, left * g, (top + h) * g, (left + w) * g, d,
                          _albedo(rng, spec.albedo_min)))
    return render(spec.height, spec.width, background, rects, bg_albedo, near, spec.ambient)


# ---------------------------------------------------------------- PFM

class PFMFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class PFMEndiannessError(PFMFormatError):
    pass


def write_pfm(path, depth) -> None:
    """Grayscale little-endian PFM, rows stored bottom to top."""
    arr = np.asarray(depth, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"PFM depth map must be 2-D, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("PFM values must be finite")
    h, w = arr.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(arr[::-1], dtype="<f4").tobytes())


_LINE = re.compile(rb"[^\n]*\n")


def read_pfm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    pos = 0
    lines = []
    for _ in range(3):
        m = _LINE.match(buf, pos)
        if m is None:
            raise PFMFormatError("truncated header", pos)
        lines.append((pos, m.group(0).strip()))
        pos = m.end()
    (o0, magic), (o1, dims), (o2, scale) = lines
    if magic != b"Pf":
        raise PFMFormatError(f"expected grayscale 'Pf' magic, got {magic!r}", o0)
    try:
        w, h = (int(v) for v in dims.split())
    except ValueError:
        raise PFMFormatError(f"malformed dimensions line {dims!r}", o1) from None
    if w <= 0 or h <= 0:
        raise PFMFormatError(f"nonpositive dimensions {w}x{h}", o1)
    try:
        s = float(scale)
    except ValueError:
        raise PFMFormatError(f"malformed scale line {scale!r}", o2) from None
    if s >= 0:
        raise PFMEndiannessError("big-endian PFM (positive scale) is not supported", o2)
    need = 4 * w * h
    if len(buf) - pos < need:
        raise PFMFormatError(f"truncated payload: {len(buf) - pos} of {need} bytes", len(buf))
    data = np.frombuffer(buf, dtype="<f4", count=w * h, offset=pos).reshape(h, w)
    return data[::-1].astype(np.float32)


# ---------------------------------------------------------------- PPM

@dataclass
class PPMReport:
    clamped: int


def _to_bytes(values: np.ndarray) -> tuple[np.ndarray, int]:
    bad = int(np.count_nonzero((values < 0) | (values > 1) | ~np.isfinite(values)))
    v = np.clip(np.nan_to_num(values, nan=0.0), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8), bad


def write_ppm(path, image) -> PPMReport:
    """Binary P6, 8-bit; values rounded half away from zero; out-of-range values clamped.

    ``image`` is (3, H, W) or a grayscale (H, W) map replicated to RGB.
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = np.repeat(arr[None], 3, axis=0)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"PPM image must be (3, H, W) or (H, W), got {arr.shape}")
    _, h, w = arr.shape
    payload, clamped = _to_bytes(arr.transpose(1, 2, 0))
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + payload.tobytes())
    return PPMReport(clamped)


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file written by :func:`write_ppm`; returns (3, H, W) in [0, 1]."""
    buf = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)").match(buf, pos)
        if m is None:
            raise ValueError(f"truncated PPM header at byte {pos}")
        tokens.append(m.group(2))
        pos = m.end()
    if tokens[0] != b"P6":
        raise ValueError(f"expected P6 magic, got {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"only 8-bit PPM is supported, maxval {maxval}")
    pos += 1
    if len(buf) - pos < 3 * w * h:
        raise ValueError(f"truncated PPM payload at byte {len(buf)}")
    data = np.frombuffer(buf, dtype=np.uint8, count=3 * w * h, offset=pos).reshape(h, w, 3)
    return data.transpose(2, 0, 1).astype(np.float64) / 255.0


# ---------------------------------------------------------------- datasets

def sample_seed(base_seed: int, index: int) -> int:
    return base_seed * 100_000 + index


def write_sample(directory, index: int, sample: SceneSample) -> None:
    d = Path(directory)
    write_ppm(d / f"{index:04d}.ppm", sample.image)
    write_pfm(d / f"{index:04d}.pfm", sample.depth)
    if not sample.mask.all():
        write_pfm(d / f"{index:04d}.mask.pfm", sample.mask.astype(np.float32))


def read_sample(directory, index: int) -> SceneSample:
    d = Path(directory)
    image = read_ppm(d / f"{index:04d}.ppm")
    depth = read_pfm(d / f"{index:04d}.pfm").astype(np.float64)
    mask_path = d / f"{index:04d}.mask.pfm"
    mask = read_pfm(mask_path) > 0.5 if mask_path.exists() else depth > 0
    return SceneSample(image, depth, mask & (depth > 0))
