"""Fused elementwise kernels. numba when available, numpy otherwise."""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

GELU_C = math.sqrt(2.0 / math.pi)
GELU_K = 0.044715


def _gelu_fwd_np(x):
    x2 = x * x
    t = x2 * (GELU_C * GELU_K)
    t += GELU_C
    t *= x
    np.tanh(t, out=t)
    out = t + 1.0
    out *= x
    out *= 0.5
    return out, t


def _gelu_bwd_np(x, t, g):
    d = x * x * (3 * GELU_K)
    d += 1.0
    d *= x
    d *= 0.5 * GELU_C
    d *= 1.0 - t * t
    d += 0.5 * (1.0 + t)
    d *= g
    return d


if HAVE_NUMBA:

    # scalar libm tanh is slow; the tanh pass stays on numpy's vectorized ufunc
    @njit(cache=True)
    def _gelu_inner_flat(x, t):
        for i in range(x.size):
            xi = x[i]
            t[i] = GELU_C * (xi + GELU_K * xi * xi * xi)

    @njit(cache=True)
    def _gelu_out_flat(x, t, out):
        for i in range(x.size):
            out[i] = 0.5 * x[i] * (1.0 + t[i])

    @njit(cache=True)
    def _gelu_bwd_flat(x, t, g, d):
        for i in range(x.size):
            xi = x[i]
            ti = t[i]
            dinner = GELU_C * (1.0 + 3.0 * GELU_K * xi * xi)
            d[i] = g[i] * (0.5 * (1.0 + ti) + 0.5 * xi * (1.0 - ti * ti) * dinner)

    def gelu_fwd(x):
        xc = np.ascontiguousarray(x)
        out = np.empty_like(xc)
        t = np.empty_like(xc)
        _gelu_inner_flat(xc.reshape(-1), t.reshape(-1))
        np.tanh(t, out=t)
        _gelu_out_flat(xc.reshape(-1), t.reshape(-1), out.reshape(-1))
        return out, t

    def gelu_bwd(x, t, g):
        g = np.ascontiguousarray(g, dtype=x.dtype)
        d = np.empty_like(x)
        _gelu_bwd_flat(x.reshape(-1), t.reshape(-1), g.reshape(-1), d.reshape(-1))
        return d

else:
    gelu_fwd = _gelu_fwd_np
    gelu_bwd = _gelu_bwd_np
