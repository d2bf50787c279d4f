"""Numpy reference kernels: causal softmax, layer norm, tanh-approx GELU.

These define the numeric contracts; the optional compiled backend in
icclab._core implements the same signatures. Softmax and its backward run
in place (the caller keeps the probabilities for the backward pass), the
rest allocate their outputs. All functions preserve the input dtype.
"""

from __future__ import annotations

import numpy as np

LN_EPS = 1e-5
_GELU_K = 0.7978845608028654  # sqrt(2/pi)
_GELU_C = 0.044715

NAME = "python"


def causal_softmax(scores: np.ndarray) -> np.ndarray:
    """In place over the last axis: row t is a softmax over columns 0..t.

    `scores` has shape (..., T, T) and must be C-contiguous; entries above
    the diagonal are overwritten with exact zeros.
    """
    if not scores.flags["C_CONTIGUOUS"]:
        raise ValueError("causal_softmax requires a C-contiguous array")
    t = scores.shape[-1]
    idx = np.arange(t)
    scores[..., idx[:, None] < idx[None, :]] = -np.inf
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    return scores


def causal_softmax_backward(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """Jacobian-vector product of the causal softmax, written into dprobs.

    Given post-softmax probabilities P and upstream gradient dP, computes
    dS = P * (dP - sum_q P*dP) in place in dprobs. Masked columns come out
    exactly zero because P is zero there.
    """
    s = np.sum(probs * dprobs, axis=-1, keepdims=True)
    dprobs -= s
    dprobs *= probs
    return dprobs


def layernorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    """Normalize the last axis; returns (y, mean, rstd) with stats un-broadcast."""
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + np.asarray(LN_EPS, dtype=x.dtype))
    y = (x - mean) * rstd * gamma + beta
    return y, mean[..., 0], rstd[..., 0]


def layernorm_backward(dy, x, gamma, mean, rstd):
    """Returns (dx, dgamma, dbeta); dgamma/dbeta are summed over leading axes."""
    xhat = (x - mean[..., None]) * rstd[..., None]
    lead = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=lead)
    dbeta = dy.sum(axis=lead)
    dyg = dy * gamma
    m1 = dyg.mean(axis=-1, keepdims=True)
    m2 = (dyg * xhat).mean(axis=-1, keepdims=True)
    dx = (dyg - m1 - xhat * m2) * rstd[..., None]
    return dx, dgamma, dbeta


def gelu_forward(x: np.ndarray) -> np.ndarray:
    """Tanh-approximate GELU: 0.5 x (1 + tanh(k (x + 0.044715 x^3)))."""
    k = np.asarray(_GELU_K, dtype=x.dtype)
    c = np.asarray(_GELU_C, dtype=x.dtype)
    return 0.5 * x * (1.0 + np.tanh(k * (x + c * x * x * x)))


def gelu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    k = np.asarray(_GELU_K, dtype=x.dtype)
    c = np.asarray(_GELU_C, dtype=x.dtype)
    t = np.tanh(k * (x + c * x * x * x))
    dgelu = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * c * x * x)
    return dy * dgelu
