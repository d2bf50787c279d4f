"""Low-rank adapters on the attention projections.

An adapted weight is W + (alpha/r) * down @ up with up initialized to zero,
so a fresh adapter leaves the forward pass exactly at the base model.
Training a LoraModel touches only the adapter tensors; the base weights
stay bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Transformer


class RankTooLarge(ValueError):
    """Adapter rank exceeds the adapted dimension."""


TARGETS = {
    "query": "attn.wq",
    "key": "attn.wk",
    "value": "attn.wv",
    "output": "attn.wo",
}


@dataclass
class LoraAdapter:
    down: np.ndarray  # (d, r)
    up: np.ndarray    # (r, d)
    alpha: float

    @property
    def rank(self) -> int:
        return self.down.shape[1]

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def delta(self) -> np.ndarray:
        return self.scaling * (self.down @ self.up)


class LoraModel:
    """Transformer wrapper exposing only adapter tensors as parameters."""

    def __init__(self, base: Transformer, adapters: dict[str, LoraAdapter]):
        self.base = base
        self.adapters = adapters
        self.params: dict[str, np.ndarray] = {}
        for name, ad in adapters.items():
            self.params[f"lora.{name}.down"] = ad.down
            self.params[f"lora.{name}.up"] = ad.up

    @property
    def config(self):
        return self.base.config

    @property
    def dtype(self):
        return self.base.dtype

    def effective_weights(self) -> dict:
        return {name: self.base.params[name] + ad.delta().astype(self.base.dtype)
                for name, ad in self.adapters.items()}

    def forward_batch(self, tokens, weights=None):
        eff = self.effective_weights()
        if weights:
            eff.update(weights)
        return self.base.forward_batch(tokens, weights=eff)

    def forward(self, tokens):
        from .network import AttentionTensor

        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 1:
            raise ValueError("forward expects a 1-D token sequence")
        logits, cache = self.forward_batch(tokens[None, :])
        probs = np.stack([blk["probs"][0] for blk in cache["blocks"]])
        return logits[0], AttentionTensor(probs=probs)

    def backward(self, cache, dlogits) -> dict:
        base_grads = self.base.backward(cache, dlogits)
        grads = {}
        for name, ad in self.adapters.items():
            dw = base_grads[name]
            grads[f"lora.{name}.down"] = (ad.scaling * (dw @ ad.up.T)).astype(ad.down.dtype)
            grads[f"lora.{name}.up"] = (ad.scaling * (ad.down.T @ dw)).astype(ad.up.dtype)
        return grads

    def astype(self, dtype) -> "LoraModel":
        base = self.base.astype(dtype)
        adapters = {
            name: LoraAdapter(ad.down.astype(dtype), ad.up.astype(dtype), ad.alpha)
            for name, ad in self.adapters.items()
        }
        return LoraModel(base, adapters)


def attach_lora(model: Transformer, targets=("query", "key", "value", "output"),
                r: int = 8, alpha: float = 16.0, seed: int = 0) -> LoraModel:
    """Wrap the model with zero-initialized adapters on the chosen projections."""
    cfg = model.config
    if r < 1:
        raise ValueError("rank must be >= 1")
    if r > cfg.d_model:
        raise RankTooLarge(f"rank {r} > d_model {cfg.d_model}")
    unknown = set(targets) - set(TARGETS)
    if unknown:
        raise ValueError(f"unknown adapter targets: {sorted(unknown)}")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 977, seed]))
    adapters = {}
    for i in range(cfg.layers):
        for t in targets:
            name = f"blocks.{i}.{TARGETS[t]}"
            down = rng.normal(0.0, 0.02, size=(cfg.d_model, r)).astype(model.dtype)
            up = np.zeros((r, cfg.d_model), dtype=model.dtype)
            adapters[name] = LoraAdapter(down=down, up=up, alpha=float(alpha))
    return LoraModel(model, adapters)


def merge_lora(lora: LoraModel) -> Transformer:
    """Fold adapters into dense weights; returns an independent plain model."""
    merged = lora.base.copy()
    for name, ad in lora.adapters.items():
        merged.params[name] += ad.delta().astype(merged.dtype)
    return merged
