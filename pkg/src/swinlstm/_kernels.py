"""Hot elementwise / row-wise kernels.

Each kernel has a pure-numpy implementation and, when numba is importable,
an ``@njit`` twin.  The numba path is used unless the environment variable
``SWINLSTM_DISABLE_NUMBA`` is set to a truthy value before import.

Row kernels operate on C-contiguous 2-D arrays (rows, features).  The numba
versions reduce sequentially in index order with a float64 accumulator, so
results are bit-reproducible run to run.
"""
import math
import os

import numpy as np

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("SWINLSTM_DISABLE_NUMBA", "").lower() not in (
    "1", "true", "yes", "on")


# ---------------------------------------------------------------- numpy path

def layer_norm_fwd_np(x, gamma, beta, eps):
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def layer_norm_bwd_np(g, xhat, rstd, gamma):
    dgamma = (g * xhat).sum(axis=0)
    dbeta = g.sum(axis=0)
    gx = g * gamma
    dx = (gx - gx.mean(axis=1, keepdims=True)
          - xhat * (gx * xhat).mean(axis=1, keepdims=True)) * rstd[:, None]
    return dx, dgamma, dbeta


def softmax_fwd_np(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd_np(y, g):
    return y * (g - (g * y).sum(axis=1, keepdims=True))


def gelu_fwd_np(x):
    """Returns (gelu(x), tanh term); the tanh term feeds the backward kernel."""
    t = np.tanh(GELU_C * (x + GELU_A * (x * x * x)))
    out = t + 1.0
    out *= x
    out *= 0.5
    return out, t


def gelu_bwd_np(x, t, g):
    d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * (x * x))
    return g * d


def adam_np(p, g, m, v, lr, b1, b2, eps, bc1, bc2):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------- numba path

if HAS_NUMBA:
    @numba.njit(cache=True)
    def layer_norm_fwd_nb(x, gamma, beta, eps):
        rows, n = x.shape
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        rstd = np.empty(rows, dtype=x.dtype)
        for r in range(rows):
            acc = 0.0
            for j in range(n):
                acc += x[r, j]
            mu = acc / n
            acc = 0.0
            for j in range(n):
                d = x[r, j] - mu
                acc += d * d
            rs = 1.0 / math.sqrt(acc / n + eps)
            rstd[r] = rs
            for j in range(n):
                h = (x[r, j] - mu) * rs
                xhat[r, j] = h
                y[r, j] = h * gamma[j] + beta[j]
        return y, xhat, rstd

    @numba.njit(cache=True)
    def layer_norm_bwd_nb(g, xhat, rstd, gamma):
        rows, n = g.shape
        dx = np.empty_like(g)
        dgamma = np.zeros(n, dtype=np.float64)
        dbeta = np.zeros(n, dtype=np.float64)
        for r in range(rows):
            s1 = 0.0
            s2 = 0.0
            for j in range(n):
                gx = g[r, j] * gamma[j]
                s1 += gx
                s2 += gx * xhat[r, j]
                dgamma[j] += g[r, j] * xhat[r, j]
                dbeta[j] += g[r, j]
            s1 /= n
            s2 /= n
            rs = rstd[r]
            for j in range(n):
                dx[r, j] = (g[r, j] * gamma[j] - s1 - xhat[r, j] * s2) * rs
        return dx, dgamma.astype(g.dtype), dbeta.astype(g.dtype)

    @numba.njit(cache=True)
    def softmax_fwd_nb(x):
        rows, n = x.shape
        y = np.empty_like(x)
        for r in range(rows):
            mx = x[r, 0]
            for j in range(1, n):
                if x[r, j] > mx:
                    mx = x[r, j]
            acc = 0.0
            for j in range(n):
                e = math.exp(x[r, j] - mx)
                y[r, j] = e
                acc += e
            inv = 1.0 / acc
            for j in range(n):
                y[r, j] *= inv
        return y

    @numba.njit(cache=True)
    def softmax_bwd_nb(y, g):
        rows, n = y.shape
        dx = np.empty_like(y)
        for r in range(rows):
            acc = 0.0
            for j in range(n):
                acc += g[r, j] * y[r, j]
            for j in range(n):
                dx[r, j] = y[r, j] * (g[r, j] - acc)
        return dx

    @numba.njit(cache=True)
    def _gelu_fwd_flat(x, out, tt):
        for i in range(x.size):
            v = x[i]
            t = math.tanh(GELU_C * (v + GELU_A * v * v * v))
            tt[i] = t
            out[i] = 0.5 * v * (1.0 + t)

    @numba.njit(cache=True)
    def _gelu_bwd_flat(x, t, g, out):
        for i in range(x.size):
            v = x[i]
            ti = t[i]
            d = 0.5 * (1.0 + ti) + 0.5 * v * (1.0 - ti * ti) * GELU_C * (1.0 + 3.0 * GELU_A * v * v)
            out[i] = g[i] * d

    def gelu_fwd_nb(x):
        x = np.ascontiguousarray(x)
        out = np.empty_like(x)
        t = np.empty_like(x)
        _gelu_fwd_flat(x.reshape(-1), out.reshape(-1), t.reshape(-1))
        return out, t

    def gelu_bwd_nb(x, t, g):
        g = np.ascontiguousarray(g, dtype=x.dtype)
        out = np.empty_like(x)
        _gelu_bwd_flat(np.ascontiguousarray(x).reshape(-1), np.ascontiguousarray(t).reshape(-1),
                       g.reshape(-1), out.reshape(-1))
        return out

    @numba.njit(cache=True)
    def _adam_flat(p, g, m, v, lr, b1, b2, eps, bc1, bc2):
        for i in range(p.size):
            gi = g[i]
            mi = b1 * m[i] + (1.0 - b1) * gi
            vi = b2 * v[i] + (1.0 - b2) * gi * gi
            m[i] = mi
            v[i] = vi
            p[i] -= lr * (mi / bc1) / (math.sqrt(vi / bc2) + eps)

    def adam_nb(p, g, m, v, lr, b1, b2, eps, bc1, bc2):
        _adam_flat(p.reshape(-1), np.ascontiguousarray(g).reshape(-1),
                   m.reshape(-1), v.reshape(-1), lr, b1, b2, eps, bc1, bc2)


# numpy's SIMD tanh outruns numba's scalar math.tanh, and the vectorised Adam
# update is also faster in numpy, so those two stay on numpy under both
# settings (see benchmarks/bench_kernels.py).
NUMBA_KERNELS = ("layer_norm_fwd", "layer_norm_bwd", "softmax_fwd", "softmax_bwd", "gelu_bwd")


def _select(name):
    if USE_NUMBA and name in NUMBA_KERNELS:
        return globals()[name + "_nb"]
    return globals()[name + "_np"]


layer_norm_fwd = _select("layer_norm_fwd")
layer_norm_bwd = _select("layer_norm_bwd")
softmax_fwd = _select("softmax_fwd")
softmax_bwd = _select("softmax_bwd")
gelu_fwd = _select("gelu_fwd")
gelu_bwd = _select("gelu_bwd")
adam = _select("adam")

BACKEND = "numba" if USE_NUMBA else "numpy"
