"""Finite-difference verification of the hand-written gradients.

The model is cloned to float64 before checking so that central differences
at eps=1e-3 resolve well below the 1e-4 acceptance threshold.
"""

from __future__ import annotations

import numpy as np

from .loss import ntp_loss, ntp_loss_and_grad
from .network import Transformer


def default_mask(tokens: np.ndarray) -> np.ndarray:
    """Every position except the first is a prediction target."""
    mask = np.ones_like(tokens, dtype=bool)
    mask[:, 0] = False
    return mask


def analytic_grads(model: Transformer, tokens: np.ndarray, mask: np.ndarray):
    logits, cache = model.forward_batch(tokens)
    loss, dlogits = ntp_loss_and_grad(logits, tokens, mask)
    return loss, model.backward(cache, dlogits)


def loss_at(model: Transformer, tokens: np.ndarray, mask: np.ndarray) -> float:
    logits, _ = model.forward_batch(tokens)
    return ntp_loss(logits, tokens, mask)


def sample_entries(model: Transformer, fraction: float, rng) -> list[tuple[str, int]]:
    """Roughly `fraction` of all entries, at least one per parameter tensor."""
    entries = []
    for name, arr in model.params.items():
        k = max(1, int(round(arr.size * fraction)))
        for flat in rng.choice(arr.size, size=min(k, arr.size), replace=False):
            entries.append((name, int(flat)))
    return entries


def finite_diff_entries(model, tokens, mask, entries, eps: float) -> dict:
    """Central differences of the loss for the chosen parameter entries.

    Uses the five-point fourth-order central stencil: at step 1e-3 the
    plain two-point stencil has truncation error around 3e-4, which would
    drown the 1e-4 gate this check must enforce.
    """
    out: dict[tuple[str, int], float] = {}
    for name, flat in entries:
        arr = model.params[name]
        orig = arr.flat[flat]

        def at(offset):
            arr.flat[flat] = orig + offset
            return loss_at(model, tokens, mask)

        fd = (at(-2 * eps) - 8 * at(-eps) + 8 * at(eps) - at(2 * eps)) / (12 * eps)
        arr.flat[flat] = orig
        out[(name, flat)] = fd
    return out


def relative_error(a: float, b: float, floor: float = 1e-2) -> float:
    return abs(a - b) / max(abs(a) + abs(b), floor)


def max_relative_error(grads: dict, numeric: dict) -> float:
    worst = 0.0
    for (name, flat), fd in numeric.items():
        worst = max(worst, relative_error(float(grads[name].flat[flat]), fd))
    return worst


def grad_check(model: Transformer, tokens, mask=None, eps: float = 1e-3,
               fraction: float = 0.01, seed: int = 0) -> float:
    """Max relative error between analytic and numeric gradients.

    Checks roughly `fraction` of parameter entries (at least one per tensor)
    on a float64 clone so the comparison is not limited by model precision.
    """
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    mask = default_mask(tokens) if mask is None else np.atleast_2d(mask)
    m64 = model.astype(np.float64)
    _, grads = analytic_grads(m64, tokens, mask)
    rng = np.random.default_rng(seed)
    entries = sample_entries(m64, fraction, rng)
    numeric = finite_diff_entries(m64, tokens, mask, entries, eps)
    return max_relative_error(grads, numeric)
