"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .numerics import Tensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    worst: tuple  # (tensor index, flat index, analytic, numeric)

    def ok(self, rtol: float = 1e-2) -> bool:
        return self.max_rel_error <= rtol


def rel_error(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    eps: float = 1e-3,
    max_samples: int | None = 200,
    rng: np.random.Generator | None = None,
) -> GradCheckResult:
    """Compare ``backward`` gradients with ``(f(x+eps) - f(x-eps)) / 2eps``.

    ``loss_fn`` must rebuild the graph from the current tensor values on every
    call and return a scalar. At most ``max_samples`` coordinates are probed,
    drawn uniformly over all entries of ``tensors``.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    nx.backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    sizes = np.array([t.size for t in tensors])
    total = int(sizes.sum())
    if max_samples is None or max_samples >= total:
        picks = np.arange(total)
    else:
        picks = np.sort(rng.choice(total, size=max_samples, replace=False))
    bounds = np.cumsum(sizes)

    worst = (0, 0, 0.0, 0.0)
    max_err = 0.0
    with nx.no_grad():
        for flat in picks:
            ti = int(np.searchsorted(bounds, flat, side="right"))
            idx = int(flat - (bounds[ti - 1] if ti else 0))
            view = tensors[ti].data.reshape(-1)
            orig = view[idx]
            view[idx] = orig + eps
            up = float(loss_fn().data)
            view[idx] = orig - eps
            down = float(loss_fn().data)
            view[idx] = orig
            num = (up - down) / (2 * eps)
            ana = float(analytic[ti].reshape(-1)[idx])
            err = rel_error(ana, num)
            if err > max_err:
                max_err, worst = err, (ti, idx, ana, num)
    return GradCheckResult(max_err, len(picks), worst)
