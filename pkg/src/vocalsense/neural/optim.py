"""Adam optimizer and learning-rate schedules."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Adam:
    """Adam with bias correction; parameter order is fixed at construction."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float | None = None) -> None:
        self.t += 1
        rate = self.lr if lr is None else lr
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            m = self._m[k]
            v = self._v[k]
            m += (1.0 - self.b1) * (p.grad - m)
            v += (1.0 - self.b2) * (p.grad * p.grad - v)
            p.data -= rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


def warmup_linear(step: int, total_steps: int, warmup_frac: float = 0.1) -> float:
    """Linear ramp over the first warmup_frac of steps, then linear decay to 0."""
    if total_steps <= 0:
        return 1.0
    warmup = max(1, int(round(warmup_frac * total_steps)))
    if step < warmup:
        return (step + 1) / warmup
    if total_steps == warmup:
        return 1.0
    return max(0.0, (total_steps - step) / (total_steps - warmup))
