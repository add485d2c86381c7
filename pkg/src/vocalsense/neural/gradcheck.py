"""Central-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from ..errors import NonFiniteLoss
from .tensor import Tensor


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    step: float = 1e-4,
    entries_per_tensor: int | None = None,
) -> float:
    """Compare analytic gradients of a scalar loss against central differences.

    f must be deterministic and side-effect free so it can be re-evaluated at
    perturbed parameter values. Returns the worst relative error
    |a - n| / max(1, |a|, |n|) over all checked entries.

    entries_per_tensor, when set, checks an evenly spaced subset of each
    tensor's entries instead of every one.
    """
    for p in params.values():
        p.zero_grad()
    loss = f()
    if not np.all(np.isfinite(loss.data)):
        raise NonFiniteLoss(f"loss evaluated to {loss.data!r}")
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if entries_per_tensor is None or entries_per_tensor >= n:
            indices = range(n)
        else:
            indices = np.linspace(0, n - 1, entries_per_tensor).astype(int)
        for i in indices:
            saved = flat[i]
            flat[i] = saved + step
            hi = f().item()
            flat[i] = saved - step
            lo = f().item()
            flat[i] = saved
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NonFiniteLoss(f"perturbed loss non-finite at {name}[{i}]")
            numeric = (hi - lo) / (2.0 * step)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
