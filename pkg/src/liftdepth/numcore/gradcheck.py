from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .params import ParamStore
from .tensor import Tensor, backward, no_grad


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    worst_index: tuple[int, ...] | None
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    tol: float
    deterministic: bool = True
    entries: list[ParamCheck] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.deterministic and self.max_rel_error < self.tol

    def worst(self, k: int = 5) -> list[ParamCheck]:
        return sorted(self.entries, key=lambda e: -e.max_rel_error)[:k]

    def failures(self) -> list[ParamCheck]:
        return [e for e in self.entries if e.max_rel_error >= self.tol]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from dominating."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def finite_diff_check(
    f: Callable[[], Tensor],
    params: ParamStore,
    eps: float = 1e-6,
    tol: float = 1e-4,
    floor: float = 1e-6,
    names: list[str] | None = None,
    grad_hook: Callable[[dict[str, np.ndarray]], None] | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` takes no arguments and reads the parameters from ``params``.
    ``grad_hook`` may edit the analytic gradients before comparison; it is
    the negative-control hook used to confirm the checker catches a broken
    backward pass.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    report = GradCheckReport(tol=tol)
    with no_grad():
        first = f().data.copy()
        second = f().data.copy()
    if not np.array_equal(first, second):
        report.deterministic = False
        return report

    params.zero_grad()
    backward(f())
    analytic = {name: p.grad.copy() for name, p in params.items()}
    if grad_hook is not None:
        grad_hook(analytic)

    with no_grad():
        for name in names if names is not None else params.names():
            p = params[name]
            numeric = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = f().item()
                flat[i] = orig - eps
                down = f().item()
                flat[i] = orig
                numeric.reshape(-1)[i] = (up - down) / (2.0 * eps)
            err = relative_error(analytic[name], numeric, floor)
            if err.size:
                worst = int(np.argmax(err))
                idx = np.unravel_index(worst, err.shape)
                report.entries.append(ParamCheck(
                    name, float(err.reshape(-1)[worst]), tuple(int(i) for i in idx),
                    float(analytic[name].reshape(-1)[worst]), float(numeric.reshape(-1)[worst]),
                ))
    return report
