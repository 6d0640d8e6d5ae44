"""AdamW with linear warmup then linear decay, plus global-norm clipping."""

from __future__ import annotations

import math

import numpy as np

from .model import ModelParams


def lr_at(step: int, base_lr: float, warmup: int, total: int) -> float:
    """Learning rate for 1-based ``step``."""
    if warmup > 0 and step <= warmup:
        return base_lr * step / warmup
    remaining = max(total - step, 0)
    span = max(total - warmup, 1)
    return base_lr * remaining / span


class AdamW:
    def __init__(self, params: ModelParams, lr: float, total_steps: int, warmup: int = 0,
                 betas=(0.9, 0.999), eps: float = 1e-6, weight_decay: float = 0.01, clip_norm: float | None = 1.0):
        self.params = params
        self.base_lr = lr
        self.total_steps = total_steps
        self.warmup = warmup
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self) -> float:
        """Update every trainable tensor that received a gradient; returns the pre-clip grad norm."""
        live = [(n, p) for n, p in self.params.trainable() if p.grad is not None]
        norm = math.sqrt(sum(float(np.vdot(p.grad, p.grad)) for _, p in live))
        scale = 1.0
        if self.clip_norm and norm > self.clip_norm:
            scale = self.clip_norm / (norm + 1e-12)
        self.t += 1
        lr = lr_at(self.t, self.base_lr, self.warmup, self.total_steps)
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in live:
            g = p.grad * scale if scale != 1.0 else p.grad
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            # no decay on biases and layer-norm gains
            if self.weight_decay and p.ndim > 1:
                update = update + self.weight_decay * p.data
            p.data -= (lr * update).astype(p.data.dtype)
        return norm

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"opt.m/{name}"] = self.m[name]
            out[f"opt.v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        self.m.clear()
        self.v.clear()
        for key, arr in arrays.items():
            kind, _, name = key.partition("/")
            target = self.m if kind == "opt.m" else self.v
            target[name] = np.array(arr, dtype=np.float32)
