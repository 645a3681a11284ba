"""Hot numeric kernels: row softmax, layer-norm, GELU, and the Adam update.

Each kernel exists in two flavors with identical math: a numba @njit version
(loops, fused, no temporaries) and a pure-numpy fallback. The active flavor is
chosen at import time: numpy when numba is missing or when the environment
variable CLIMATLAB_NUMBA is set to "0". Matrix products stay on BLAS and are
not kerneled here. `benchmarks/kernel_bench.py` times both paths side by side.
"""

import math
import os

import numpy as np
from scipy.special import erf as _erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

NUMBA_REQUESTED = os.environ.get("CLIMATLAB_NUMBA", "1") != "0"

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

NUMBA_ENABLED = HAS_NUMBA and NUMBA_REQUESTED


# ---------------------------------------------------------------------------
# Pure-numpy reference path
# ---------------------------------------------------------------------------

def softmax_fwd_np(x):
    """Row softmax of a 2D array, max-subtracted for stability."""
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd_np(y, g):
    """Input gradient of row softmax: y * (g - sum(g * y))."""
    dot = (g * y).sum(axis=1, keepdims=True)
    return y * (g - dot)


def layernorm_fwd_np(x, gain, bias, eps):
    """Row layer-norm. Returns (y, mu, rstd); mu/rstd are cached for backward."""
    mu = x.mean(axis=1)
    var = ((x - mu[:, None]) ** 2).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mu[:, None]) * rstd[:, None] * gain + bias
    return y, mu, rstd


def layernorm_bwd_np(x, gain, mu, rstd, g):
    """Gradients of row layer-norm w.r.t. (x, gain, bias)."""
    xhat = (x - mu[:, None]) * rstd[:, None]
    gg = g * gain
    n = x.shape[1]
    mean_gg = gg.mean(axis=1, keepdims=True)
    mean_ggx = (gg * xhat).mean(axis=1, keepdims=True)
    gx = rstd[:, None] * (gg - mean_gg - xhat * mean_ggx)
    ggain = (g * xhat).sum(axis=0)
    gbias = g.sum(axis=0)
    return gx, ggain, gbias


def gelu_fwd_np(x):
    """Exact GELU on a flat array: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    return 0.5 * x * (1.0 + _erf(x * _INV_SQRT2))


def gelu_bwd_np(x, g):
    """Input gradient of exact GELU (flat arrays)."""
    cdf = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return g * (cdf + x * pdf)


def adam_step_np(p, g, m, v, lr, beta1, beta2, eps, t):
    """One in-place Adam update on flat arrays (bias-corrected)."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# Numba path (same math, fused loops)
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def softmax_fwd_nb(x):
        rows, cols = x.shape
        y = np.empty_like(x)
        for i in range(rows):
            m = x[i, 0]
            for j in range(1, cols):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(cols):
                y[i, j] = np.exp(x[i, j] - m)
                s += y[i, j]
            for j in range(cols):
                y[i, j] /= s
        return y

    @njit(cache=True)
    def softmax_bwd_nb(y, g):
        rows, cols = y.shape
        gx = np.empty_like(y)
        for i in range(rows):
            dot = 0.0
            for j in range(cols):
                dot += g[i, j] * y[i, j]
            for j in range(cols):
                gx[i, j] = y[i, j] * (g[i, j] - dot)
        return gx

    @njit(cache=True)
    def layernorm_fwd_nb(x, gain, bias, eps):
        rows, cols = x.shape
        y = np.empty_like(x)
        mu = np.empty(rows, dtype=x.dtype)
        rstd = np.empty(rows, dtype=x.dtype)
        for i in range(rows):
            s = 0.0
            for j in range(cols):
                s += x[i, j]
            m = s / cols
            var = 0.0
            for j in range(cols):
                d = x[i, j] - m
                var += d * d
            r = 1.0 / np.sqrt(var / cols + eps)
            mu[i] = m
            rstd[i] = r
            for j in range(cols):
                y[i, j] = (x[i, j] - m) * r * gain[j] + bias[j]
        return y, mu, rstd

    @njit(cache=True)
    def layernorm_bwd_nb(x, gain, mu, rstd, g):
        rows, cols = x.shape
        gx = np.empty_like(x)
        ggain = np.zeros(cols, dtype=x.dtype)
        gbias = np.zeros(cols, dtype=x.dtype)
        for i in range(rows):
            mean_gg = 0.0
            mean_ggx = 0.0
            for j in range(cols):
                xhat = (x[i, j] - mu[i]) * rstd[i]
                gg = g[i, j] * gain[j]
                mean_gg += gg
                mean_ggx += gg * xhat
                ggain[j] += g[i, j] * xhat
                gbias[j] += g[i, j]
            mean_gg /= cols
            mean_ggx /= cols
            for j in range(cols):
                xhat = (x[i, j] - mu[i]) * rstd[i]
                gg = g[i, j] * gain[j]
                gx[i, j] = rstd[i] * (gg - mean_gg - xhat * mean_ggx)
        return gx, ggain, gbias

    @njit(cache=True)
    def gelu_fwd_nb(x):
        n = x.shape[0]
        y = np.empty_like(x)
        for i in range(n):
            y[i] = 0.5 * x[i] * (1.0 + math.erf(x[i] * _INV_SQRT2))
        return y

    @njit(cache=True)
    def gelu_bwd_nb(x, g):
        n = x.shape[0]
        gx = np.empty_like(x)
        for i in range(n):
            cdf = 0.5 * (1.0 + math.erf(x[i] * _INV_SQRT2))
            pdf = _INV_SQRT2PI * np.exp(-0.5 * x[i] * x[i])
            gx[i] = g[i] * (cdf + x[i] * pdf)
        return gx

    @njit(cache=True)
    def adam_step_nb(p, g, m, v, lr, beta1, beta2, eps, t):
        n = p.size
        c1 = 1.0 - beta1 ** t
        c2 = 1.0 - beta2 ** t
        for i in range(n):
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
            v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i])
            p[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


if NUMBA_ENABLED:
    softmax_fwd = softmax_fwd_nb
    softmax_bwd = softmax_bwd_nb
    layernorm_fwd = layernorm_fwd_nb
    layernorm_bwd = layernorm_bwd_nb
    gelu_fwd = gelu_fwd_nb
    gelu_bwd = gelu_bwd_nb
    adam_step = adam_step_nb
else:
    softmax_fwd = softmax_fwd_np
    softmax_bwd = softmax_bwd_np
    layernorm_fwd = layernorm_fwd_np
    layernorm_bwd = layernorm_bwd_np
    gelu_fwd = gelu_fwd_np
    gelu_bwd = gelu_bwd_np
    adam_step = adam_step_np


def backend() -> str:
    """Name of the active kernel path ("numba" or "numpy")."""
    return "numba" if NUMBA_ENABLED else "numpy"


def warmup():
    """Trigger numba compilation on tiny inputs (no-op on the numpy path)."""
    for dt in (np.float64, np.float32):
        x = np.ones((2, 3), dtype=dt)
        gain = np.ones(3, dtype=dt)
        y = softmax_fwd(x)
        softmax_bwd(y, x)
        _, mu, rstd = layernorm_fwd(x, gain, gain, 1e-5)
        layernorm_bwd(x, gain, mu, rstd, x)
        flat = np.ones(4, dtype=dt)
        gelu_bwd(flat, gelu_fwd(flat))
        adam_step(flat.copy(), flat, flat.copy(), flat.copy(), 1e-3, 0.9, 0.999, 1e-8, 1)
