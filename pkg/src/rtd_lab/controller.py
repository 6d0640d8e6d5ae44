"""Adaptive exit-probability controller for the generator.

Once per accuracy window::

    diff = clip(acc - acc_prev, -1, 1)
    P    = softmax(P + alpha * diff * R)

With ``R = [0, 1, 2, 3]`` a rise in discriminator accuracy moves probability
toward the higher (harder) exits, a drop moves it toward the lower ones.
Because the softmax is applied to probabilities rather than logits, repeated
zero-diff updates flatten ``P`` toward uniform; that drift is kept as is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

INITIAL_P = (0.1, 0.2, 0.3, 0.4)
REASSIGNMENT = (0.0, 1.0, 2.0, 3.0)


class ControllerError(ValueError):
    pass


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max())
    return z / z.sum()


@dataclass(frozen=True)
class ExitDistribution:
    p: np.ndarray
    r: np.ndarray
    alpha: float = 0.1
    last_window_acc: float | None = None
    history: tuple = field(default=(), compare=False)

    @classmethod
    def create(cls, initial_p=INITIAL_P, reassignment=REASSIGNMENT, alpha: float = 0.1) -> "ExitDistribution":
        p = np.asarray(initial_p, dtype=np.float64)
        r = np.asarray(reassignment, dtype=np.float64)
        if p.shape != r.shape:
            raise ControllerError(f"P has {p.size} entries but R has {r.size}")
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
            raise ControllerError(f"initial P is not a distribution: {p.tolist()}")
        if alpha <= 0:
            raise ControllerError("alpha must be positive")
        return cls(p=p, r=r, alpha=float(alpha), history=(tuple(p.tolist()),))

    def __len__(self) -> int:
        return self.p.size


def update(dist: ExitDistribution, acc_curr: float) -> ExitDistribution:
    """Apply one window update. The very first call only records ``acc_curr``."""
    if not (0.0 <= acc_curr <= 1.0) or math.isnan(acc_curr):
        raise ControllerError(f"accuracy must lie in [0, 1], got {acc_curr}")
    if dist.last_window_acc is None:
        return replace(dist, last_window_acc=float(acc_curr))
    diff = min(1.0, max(-1.0, acc_curr - dist.last_window_acc))
    p = _softmax(dist.p + dist.alpha * diff * dist.r)
    return replace(dist, p=p, last_window_acc=float(acc_curr), history=dist.history + (tuple(p.tolist()),))


def step_with_diff(p, r, alpha: float, diff: float) -> np.ndarray:
    """The bare update rule for a given (unclamped) accuracy difference."""
    diff = min(1.0, max(-1.0, diff))
    return _softmax(np.asarray(p, dtype=np.float64) + alpha * diff * np.asarray(r, dtype=np.float64))


def sample_exit(dist: ExitDistribution, rng: np.random.Generator) -> int:
    """0-based exit index drawn from P."""
    return int(rng.choice(dist.p.size, p=dist.p))
