from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .engine import Tensor, backward


@dataclass
class GradCheckResult:
    passed: bool
    worst_error: float
    worst_param: str
    checked: int


def grad_check(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], tolerance: float = 1e-5,
               step: float = 1e-5, max_per_param: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckResult:
    """Compare reverse-mode gradients of ``loss_fn()`` against central differences.

    The error per entry is ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    ``max_per_param`` limits the number of probed entries per tensor (chosen at random).
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}

    worst, worst_name, count = 0.0, "", 0
    rng = rng or np.random.default_rng(0)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = rng.choice(flat.size, size=max_per_param, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = loss_fn().item()
            flat[i] = orig - step
            fm = loss_fn().item()
            flat[i] = orig
            num = (fp - fm) / (2 * step)
            ana = analytic[name].reshape(-1)[i]
            err = abs(ana - num) / max(1.0, abs(ana), abs(num))
            count += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    for p in params.values():
        p.grad = None
    return GradCheckResult(worst <= tolerance, worst, worst_name, count)
