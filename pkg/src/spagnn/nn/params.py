from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor

__all__ = ["ParamStore"]


class ParamStore:
    """Named parameters plus their gradient accumulators and Adam moments."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already exists")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: t.shape for k, t in self.params.items()}

    def n_values(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (np.zeros_like(t.data) if t.grad is None else t.grad) for k, t in self.params.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = [k for k in self.params if k not in state]
        if missing:
            raise KeyError(f"missing parameter {missing[0]!r}")
        for k, t in self.params.items():
            value = np.asarray(state[k], dtype=np.float64)
            if value.shape != t.shape:
                raise ValueError(f"shape mismatch for {k!r}: expected {t.shape}, got {value.shape}")
            t.data = value.copy()
