"""Depth evaluation metrics and error maps."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

FIELDS = ("rmse", "abs_rel", "sq_rel", "rmse_log", "log10", "zeta1", "zeta2", "zeta3", "count")


@dataclass
class MetricReport:
    rmse: float
    abs_rel: float
    sq_rel: float
    rmse_log: float
    log10: float
    zeta1: float
    zeta2: float
    zeta3: float
    count: int

    def to_text(self) -> str:
        return "".join(f"{k} {_fmt(v)}\n" for k, v in asdict(self).items())

    @staticmethod
    def csv_header() -> str:
        return ",".join(f.name for f in fields(MetricReport))

    def to_csv_row(self) -> str:
        return ",".join(_fmt(v) for v in asdict(self).values())


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else f"{v:.9f}"


def _valid(pred, gt, mask, cap):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    mask = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if cap is not None:
        mask = mask & (gt <= cap)
    if not mask.any():
        raise ValueError("metrics need at least one valid pixel")
    d, t = pred[mask], gt[mask]
    if np.any(d <= 0) or np.any(t <= 0):
        raise ValueError("depths under the mask must be positive")
    return d, t, mask


def compute_metrics(pred, gt, mask=None, cap: float | None = None) -> MetricReport:
    """Standard monocular-depth metrics over valid pixels (optionally gt <= cap)."""
    d, t, _ = _valid(pred, gt, mask, cap)
    err = d - t
    ratio = np.maximum(d / t, t / d)
    return MetricReport(
        rmse=float(np.sqrt(np.mean(err**2))),
        abs_rel=float(np.mean(np.abs(err) / t)),
        sq_rel=float(np.mean(err**2 / t)),
        rmse_log=float(np.sqrt(np.mean((np.log(d) - np.log(t)) ** 2))),
        log10=float(np.mean(np.abs(np.log10(d) - np.log10(t)))),
        zeta1=float(np.mean(ratio < 1.25)),
        zeta2=float(np.mean(ratio < 1.25**2)),
        zeta3=float(np.mean(ratio < 1.25**3)),
        count=int(d.size),
    )


def aggregate(reports: list[MetricReport]) -> MetricReport:
    """Per-image mean of every metric; ``count`` is the total pixel count."""
    if not reports:
        raise ValueError("no reports to aggregate")
    vals = {f: float(np.mean([getattr(r, f) for r in reports])) for f in FIELDS if f != "count"}
    return MetricReport(**vals, count=int(sum(r.count for r in reports)))


def error_map(pred, gt, mask=None) -> np.ndarray:
    """Absolute error min-max normalized over valid pixels; invalid pixels are 0.

    A zero error field maps to black; any other constant field maps to 0.5.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("error map needs at least one valid pixel")
    err = np.abs(pred - gt)
    out = np.zeros(gt.shape)
    lo, hi = err[mask].min(), err[mask].max()
    if hi > lo:
        out[mask] = (err[mask] - lo) / (hi - lo)
    elif hi > 0:
        out[mask] = 0.5
    return out
