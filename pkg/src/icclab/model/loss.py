"""Next-token-prediction loss over masked positions.

The mask marks target positions p: the model must predict targets[p] from
logits[p-1]. Loss values accumulate in float64 regardless of model dtype.
"""

from __future__ import annotations

import numpy as np


class EmptyMask(ValueError):
    """The mask selects no positions."""


def _prepare(logits, targets, mask):
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=bool)
    if logits.ndim == 2:
        logits, targets, mask = logits[None], targets[None], mask[None]
    if logits.ndim != 3 or targets.shape != logits.shape[:2] or mask.shape != targets.shape:
        raise ValueError("shape mismatch between logits, targets, and mask")
    if not mask.any():
        raise EmptyMask("mask selects no positions")
    if mask[:, 0].any():
        raise ValueError("position 0 has no preceding logits to predict from")
    return logits, targets, mask


def ntp_loss(logits, targets, mask) -> float:
    """Mean cross-entropy of predicting targets[p] from logits[p-1] over the mask."""
    loss, _ = _loss_common(*_prepare(logits, targets, mask))
    return loss


def ntp_loss_and_grad(logits, targets, mask, reduction: str = "mean"):
    """Returns (loss, dlogits). reduction="sum" leaves the per-position sum,
    letting callers accumulate micro-batches and divide by the global count."""
    was_2d = np.asarray(logits).ndim == 2
    logits, targets, mask = _prepare(logits, targets, mask)
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    loss, soft = _loss_common(logits, targets, mask)
    bidx, pidx = np.nonzero(mask)
    n = len(bidx)
    if reduction == "sum":
        loss = loss * n
    else:
        soft = soft / n
    dlogits = np.zeros_like(logits)
    dlogits[bidx, pidx - 1] = soft.astype(logits.dtype)
    if was_2d:
        dlogits = dlogits[0]
    return float(loss), dlogits


def _loss_common(logits, targets, mask):
    bidx, pidx = np.nonzero(mask)
    rows = logits[bidx, pidx - 1].astype(np.float64)
    rows -= rows.max(axis=1, keepdims=True)
    expr = np.exp(rows)
    z = expr.sum(axis=1, keepdims=True)
    tgt = targets[bidx, pidx]
    log_probs = rows - np.log(z)
    loss = float(-log_probs[np.arange(len(bidx)), tgt].mean())
    soft = expr / z
    soft[np.arange(len(bidx)), tgt] -= 1.0
    return loss, soft


def masked_token_count(mask) -> int:
    return int(np.asarray(mask, dtype=bool).sum())
