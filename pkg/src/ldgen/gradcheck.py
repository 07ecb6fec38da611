"""Central-difference gradient oracle."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import EvaluationError
from .tensor import Tensor, backward


def numeric_gradient(f: Callable[[], Tensor], params: Sequence[Tensor],
                     eps: float = 1e-5) -> list[np.ndarray]:
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        out = []
        for p in params:
            p.data = np.array(p.data, dtype=np.float64, order="C")  # keeps 0-d shape
            grad = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = f().item()
                flat[i] = orig - eps
                lo = f().item()
                flat[i] = orig
                if not (np.isfinite(hi) and np.isfinite(lo)):
                    raise EvaluationError(f"non-finite objective while perturbing coordinate {i}")
                gflat[i] = (hi - lo) / (2.0 * eps)
            out.append(grad)
        return out
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad = flag


def analytic_gradient(f: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = True
        p.grad = None
    try:
        loss = f()
        if not np.isfinite(loss.data).all():
            raise EvaluationError("objective is non-finite")
        backward(loss)
        return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad = flag
            p.grad = None


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).

    ``f`` takes no arguments and rebuilds the scalar objective from the
    current contents of ``params`` each time it is called.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    params = list(params)
    ana = analytic_gradient(f, params)
    num = numeric_gradient(f, params, eps)
    worst = 0.0
    for a, n in zip(ana, num):
        if a.size == 0:
            continue
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
