from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .params import ParamStore
from .tensor import Tensor

__all__ = ["GradCheckReport", "grad_check"]


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    n_checked: int = 0

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def worst(self) -> tuple[str, float]:
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]


def grad_check(
    fn: Callable[[], Tensor],
    params: ParamStore | Mapping[str, Tensor],
    step: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare back-propagated gradients with central differences.

    ``fn`` re-evaluates a scalar loss from the current parameter values. The
    relative error per coordinate is ``|a - n| / max(1, |a|, |n|)``; the
    report keeps the maximum per parameter. ``max_coords`` samples at most
    that many coordinates per parameter.
    """
    tensors = dict(params.items())
    for t in tensors.values():
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = {k: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for k, t in tensors.items()}
    rng = rng or np.random.default_rng(0)

    report = GradCheckReport()
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        for i in coords:
            original = flat[i]
            flat[i] = original + step
            up = float(fn().data)
            flat[i] = original - step
            down = float(fn().data)
            flat[i] = original
            numeric = (up - down) / (2.0 * step)
            a = analytic[name].reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a), abs(numeric)))
        report.errors[name] = worst
        report.n_checked += len(coords)
    for t in tensors.values():
        t.grad = None
    return report
