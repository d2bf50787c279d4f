# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels mirroring icclab.kernels.reference.

Single-threaded tight loops over C-contiguous float32/float64 buffers;
in-place semantics match the reference module exactly.
"""

import numpy as np

cimport cython
from libc.math cimport exp, expf, sqrt, sqrtf

ctypedef fused floating:
    float
    double

LN_EPS = 1e-5
NAME = "compiled"

cdef inline floating _exp(floating x) noexcept nogil:
    if floating is float:
        return expf(x)
    else:
        return exp(x)


cdef inline floating _sqrt(floating x) noexcept nogil:
    if floating is float:
        return sqrtf(x)
    else:
        return sqrt(x)


def _as3d(arr):
    # note: wraparound is off module-wide, so no negative tuple indexing here
    if not arr.flags["C_CONTIGUOUS"]:
        raise ValueError("compiled kernels require C-contiguous arrays")
    nd = arr.ndim
    return arr.reshape(-1, arr.shape[nd - 2], arr.shape[nd - 1])


def _as2d(arr):
    if not arr.flags["C_CONTIGUOUS"]:
        raise ValueError("compiled kernels require C-contiguous arrays")
    return arr.reshape(-1, arr.shape[arr.ndim - 1])


cdef void _causal_softmax(floating[:, :, ::1] s) noexcept nogil:
    cdef Py_ssize_t n = s.shape[0], t = s.shape[1], i, r, q
    cdef floating mx, tot, v
    for i in range(n):
        for r in range(t):
            mx = s[i, r, 0]
            for q in range(1, r + 1):
                if s[i, r, q] > mx:
                    mx = s[i, r, q]
            tot = 0
            for q in range(r + 1):
                v = _exp(s[i, r, q] - mx)
                s[i, r, q] = v
                tot += v
            for q in range(r + 1):
                s[i, r, q] /= tot
            for q in range(r + 1, t):
                s[i, r, q] = 0


def causal_softmax(scores):
    """In-place causal softmax over the last axis; see the reference kernel."""
    view = _as3d(scores)
    if scores.dtype == np.float32:
        _causal_softmax[float](view)
    elif scores.dtype == np.float64:
        _causal_softmax[double](view)
    else:
        raise TypeError(f"unsupported dtype {scores.dtype}")
    return scores


cdef void _causal_softmax_backward(floating[:, :, ::1] p, floating[:, :, ::1] dp) noexcept nogil:
    cdef Py_ssize_t n = p.shape[0], t = p.shape[1], i, r, q
    cdef floating acc
    for i in range(n):
        for r in range(t):
            acc = 0
            for q in range(r + 1):
                acc += p[i, r, q] * dp[i, r, q]
            for q in range(r + 1):
                dp[i, r, q] = p[i, r, q] * (dp[i, r, q] - acc)
            for q in range(r + 1, t):
                dp[i, r, q] = 0


def causal_softmax_backward(probs, dprobs):
    """In-place softmax JVP into dprobs; see the reference kernel."""
    if probs.dtype != dprobs.dtype or probs.shape != dprobs.shape:
        raise ValueError("probs and dprobs must share shape and dtype")
    pv, dv = _as3d(probs), _as3d(dprobs)
    if probs.dtype == np.float32:
        _causal_softmax_backward[float](pv, dv)
    elif probs.dtype == np.float64:
        _causal_softmax_backward[double](pv, dv)
    else:
        raise TypeError(f"unsupported dtype {probs.dtype}")
    return dprobs


cdef void _layernorm_forward(floating[:, ::1] x, floating[::1] gamma, floating[::1] beta,
                             floating[:, ::1] y, floating[::1] mean, floating[::1] rstd) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef floating mu, var, dev, rs
    for i in range(n):
        mu = 0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0
        for j in range(d):
            dev = x[i, j] - mu
            var += dev * dev
        var /= d
        rs = 1 / _sqrt(var + <floating> 1e-5)
        mean[i] = mu
        rstd[i] = rs
        for j in range(d):
            y[i, j] = (x[i, j] - mu) * rs * gamma[j] + beta[j]


def layernorm_forward(x, gamma, beta):
    """Returns (y, mean, rstd) like the reference kernel."""
    xv = _as2d(x)
    y = np.empty_like(x)
    stats_shape = x.shape[: x.ndim - 1]
    mean = np.empty(stats_shape, dtype=x.dtype)
    rstd = np.empty(stats_shape, dtype=x.dtype)
    if x.dtype == np.float32:
        _layernorm_forward[float](xv, gamma, beta, _as2d(y), mean.reshape(-1), rstd.reshape(-1))
    elif x.dtype == np.float64:
        _layernorm_forward[double](xv, gamma, beta, _as2d(y), mean.reshape(-1), rstd.reshape(-1))
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return y, mean, rstd


cdef void _layernorm_backward(floating[:, ::1] dy, floating[:, ::1] x, floating[::1] gamma,
                              floating[::1] mean, floating[::1] rstd,
                              floating[:, ::1] dx, floating[::1] dgamma, floating[::1] dbeta) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef floating m1, m2, xhat, dyg, rs, mu
    for i in range(n):
        mu = mean[i]
        rs = rstd[i]
        m1 = 0
        m2 = 0
        for j in range(d):
            xhat = (x[i, j] - mu) * rs
            dyg = dy[i, j] * gamma[j]
            m1 += dyg
            m2 += dyg * xhat
            dgamma[j] += dy[i, j] * xhat
            dbeta[j] += dy[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            xhat = (x[i, j] - mu) * rs
            dx[i, j] = (dy[i, j] * gamma[j] - m1 - xhat * m2) * rs


def layernorm_backward(dy, x, gamma, mean, rstd):
    """Returns (dx, dgamma, dbeta) like the reference kernel."""
    dx = np.empty_like(x)
    dgamma = np.zeros_like(gamma)
    dbeta = np.zeros_like(gamma)
    if x.dtype == np.float32:
        _layernorm_backward[float](_as2d(dy), _as2d(x), gamma, mean.reshape(-1),
                                   rstd.reshape(-1), _as2d(dx), dgamma, dbeta)
    elif x.dtype == np.float64:
        _layernorm_backward[double](_as2d(dy), _as2d(x), gamma, mean.reshape(-1),
                                    rstd.reshape(-1), _as2d(dx), dgamma, dbeta)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return dx, dgamma, dbeta


# GELU stays on the numpy reference: it is transcendental-bound elementwise
# work where numpy's vectorized tanh beats a scalar libc-tanh loop by an
# order of magnitude (see benchmarks/bench_kernels.py). The extension only
# owns kernels where hand-written loops measure faster.
def gelu_forward(x):
    from icclab.kernels.reference import gelu_forward as ref
    return ref(x)


def gelu_backward(x, dy):
    from icclab.kernels.reference import gelu_backward as ref
    return ref(x, dy)
