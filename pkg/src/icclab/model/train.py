"""Training loop: AdamW with linear warmup, micro-batch gradient accumulation.

Episodes are encoded, length-bucketed into padded micro-batches, and the
bucket order is shuffled per epoch under the config seed. Episodes longer
than the model's positional table are skipped and counted. The loss curve
records the total masked loss plus its split into format tokens (brackets,
commas, EOS) and label tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..codec import VOCAB, TokenizedEpisode, encode_supervised
from .loss import ntp_loss, ntp_loss_and_grad
from .network import Transformer


class DivergenceError(RuntimeError):
    """Loss became non-finite; training aborted."""


@dataclass
class TrainConfig:
    lr: float = 5e-4
    effective_batch: int = 32
    micro_batch: int = 8
    epochs: int = 1
    warmup_steps: int = 200
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.effective_batch < 1 or self.micro_batch < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.micro_batch > self.effective_batch:
            self.micro_batch = self.effective_batch


@dataclass
class TrainResult:
    model: object
    curve: list[dict] = field(default_factory=list)
    steps: int = 0
    skipped_too_long: int = 0

    @property
    def final_loss(self) -> float:
        return self.curve[-1]["loss"] if self.curve else float("nan")


class AdamW:
    """Decoupled weight decay; decay applies only to matrices (ndim >= 2)."""

    def __init__(self, params: dict, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def current_lr(self) -> float:
        warm = min(1.0, (self.t + 1) / max(1, self.cfg.warmup_steps))
        return self.cfg.lr * warm

    def step(self, params: dict, grads: dict) -> float:
        cfg = self.cfg
        lr = self.current_lr()
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * np.square(g)
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
            if p.ndim >= 2:
                update = update + cfg.weight_decay * p
            p -= np.asarray(lr, dtype=p.dtype) * update
        return lr


def clip_grads(grads: dict, max_norm: float) -> float:
    """Global-norm clipping in place; returns the pre-clip norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g, dtype=np.float64)))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= np.asarray(scale, dtype=g.dtype)
    return norm


def encode_dataset(dataset, max_seq: int):
    """Encode episodes for teacher forcing, skipping ones that do not fit."""
    encs: list[TokenizedEpisode] = []
    skipped = 0
    for item in dataset:
        enc = item if isinstance(item, TokenizedEpisode) else encode_supervised(item)
        if len(enc) > max_seq:
            skipped += 1
            continue
        encs.append(enc)
    return encs, skipped


def collate(encs: list[TokenizedEpisode]):
    """Pad to the batch max length; returns (tokens, target_mask)."""
    t = max(len(e) for e in encs)
    b = len(encs)
    tokens = np.full((b, t), VOCAB.pad, dtype=np.int64)
    mask = np.zeros((b, t), dtype=bool)
    for i, e in enumerate(encs):
        tokens[i, : len(e)] = e.tokens
        mask[i, : len(e)] = e.loss_mask
    return tokens, mask


def make_batches(lengths, micro_batch: int, rng) -> list[np.ndarray]:
    """Length-bucketed micro-batches in seeded random order."""
    order = np.argsort(lengths, kind="stable")
    groups = [order[i: i + micro_batch] for i in range(0, len(order), micro_batch)]
    rng.shuffle(groups)
    return groups


def _split_losses(logits, tokens, mask):
    """(format_loss, label_loss) over the masked targets, nan when empty."""
    is_label = (tokens >= VOCAB.lbl0) & (tokens < VOCAB.lbl0 + 8)
    out = []
    for sub in (mask & ~is_label, mask & is_label):
        out.append(ntp_loss(logits, tokens, sub) if sub.any() else float("nan"))
    return out


def train(model: Transformer, dataset, cfg: TrainConfig | None = None,
          log_every: int = 1, callback=None) -> TrainResult:
    """One or more epochs of NTP training; mutates and returns the model.

    `callback`, when given, receives each logged curve row (long runs can
    report progress without polling).
    """
    cfg = cfg or TrainConfig()
    encs, skipped = encode_dataset(dataset, model.config.max_seq)
    if not encs:
        raise ValueError("dataset is empty after length filtering")
    result = TrainResult(model=model, skipped_too_long=skipped)
    opt = AdamW(model.params, cfg)
    accum = max(1, cfg.effective_batch // cfg.micro_batch)
    lengths = [len(e) for e in encs]

    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 211, epoch]))
        batches = make_batches(lengths, cfg.micro_batch, rng)
        for start in range(0, len(batches), accum):
            chunk = batches[start: start + accum]
            grads_total = None
            loss_sum = 0.0
            count = 0
            fmt_parts, lbl_parts = [], []
            for idx in chunk:
                tokens, mask = collate([encs[i] for i in idx])
                logits, cache = model.forward_batch(tokens)
                part, dlogits = ntp_loss_and_grad(logits, tokens, mask, reduction="sum")
                gs = model.backward(cache, dlogits)
                if grads_total is None:
                    grads_total = gs
                else:
                    for k in grads_total:
                        grads_total[k] += gs[k]
                n = int(mask.sum())
                loss_sum += part
                count += n
                fmt, lbl = _split_losses(logits, tokens, mask)
                fmt_parts.append((fmt, int((mask & ~_label_positions(tokens)).sum())))
                lbl_parts.append((lbl, int((mask & _label_positions(tokens)).sum())))
            loss = loss_sum / count
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at step {result.steps}")
            inv = 1.0 / count
            for k in grads_total:
                grads_total[k] *= np.asarray(inv, dtype=grads_total[k].dtype)
            norm = clip_grads(grads_total, cfg.grad_clip)
            lr = opt.step(model.params, grads_total)
            result.steps += 1
            if result.steps % log_every == 0 or start + accum >= len(batches):
                result.curve.append({
                    "step": result.steps,
                    "epoch": epoch,
                    "loss": float(loss),
                    "format_loss": _weighted(fmt_parts),
                    "label_loss": _weighted(lbl_parts),
                    "grad_norm": norm,
                    "lr": lr,
                    "tokens": count,
                })
                if callback is not None:
                    callback(result.curve[-1])
    return result


def _label_positions(tokens) -> np.ndarray:
    return (tokens >= VOCAB.lbl0) & (tokens < VOCAB.lbl0 + 8)


def _weighted(parts) -> float:
    tot, n = 0.0, 0
    for val, cnt in parts:
        if cnt and np.isfinite(val):
            tot += val * cnt
            n += cnt
    return tot / n if n else float("nan")
