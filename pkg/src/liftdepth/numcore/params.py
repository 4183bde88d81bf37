from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Named learnable tensors in registration order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def uniform(self, name: str, shape, fan_in: int, rng: np.random.Generator) -> Tensor:
        """Uniform in [-sqrt(1/fan_in), +sqrt(1/fan_in)]."""
        bound = math.sqrt(1.0 / fan_in)
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Tensor:
        return self.add(name, np.ones(shape))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def num_values(self) -> int:
        return sum(p.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = np.zeros_like(p.data)

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        if list(state) != list(self._params):
            raise KeyError("parameter names differ from the store")
        for k, v in state.items():
            if v.shape != self._params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {self._params[k].shape}")
            self._params[k].data = np.array(v, dtype=np.float64)
