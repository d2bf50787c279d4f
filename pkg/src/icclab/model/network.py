"""Causal decoder-only transformer with hand-written backward pass.

Pre-norm blocks, learned positional embeddings, weight-tied output head.
Matmuls go through numpy (BLAS); softmax, layer norm, and GELU go through
the selected kernel backend. Parameters live in an insertion-ordered dict
whose order is the checkpoint declaration order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from .config import ModelConfig


class SequenceTooLong(ValueError):
    """Input is longer than the model's positional table."""


@dataclass
class AttentionTensor:
    """Post-softmax attention probabilities, shape (layers, heads, n, n).

    Each row p is a distribution supported on columns 0..p.
    """

    probs: np.ndarray

    @property
    def num_layers(self) -> int:
        return self.probs.shape[0]

    @property
    def num_heads(self) -> int:
        return self.probs.shape[1]

    @property
    def num_tokens(self) -> int:
        return self.probs.shape[2]

    def layer(self, layer: int) -> np.ndarray:
        return self.probs[layer]

    def layer_mean(self, layer: int) -> np.ndarray:
        """Head-averaged attention for one layer, shape (n, n)."""
        return self.probs[layer].mean(axis=0)


class Transformer:
    """From-scratch causal transformer; see module docstring for layout."""

    def __init__(self, config: ModelConfig, dtype=np.float32, params: dict | None = None):
        self.config = config
        self.dtype = np.dtype(dtype)
        if params is not None:
            self.params = params
        else:
            self.params = self._init_params()

    def _init_params(self) -> dict:
        cfg = self.config
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
        std = 0.02
        # residual-path output projections get the usual 1/sqrt(2L) damping
        res_std = std / np.sqrt(2.0 * cfg.layers)

        def normal(shape, scale):
            return rng.normal(0.0, scale, size=shape).astype(self.dtype)

        d, f, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
        p: dict[str, np.ndarray] = {}
        p["tok_emb"] = normal((v, d), std)
        p["pos_emb"] = normal((cfg.max_seq, d), std)
        for i in range(cfg.layers):
            pre = f"blocks.{i}."
            p[pre + "ln1.gamma"] = np.ones(d, dtype=self.dtype)
            p[pre + "ln1.beta"] = np.zeros(d, dtype=self.dtype)
            p[pre + "attn.wq"] = normal((d, d), std)
            p[pre + "attn.bq"] = np.zeros(d, dtype=self.dtype)
            p[pre + "attn.wk"] = normal((d, d), std)
            p[pre + "attn.bk"] = np.zeros(d, dtype=self.dtype)
            p[pre + "attn.wv"] = normal((d, d), std)
            p[pre + "attn.bv"] = np.zeros(d, dtype=self.dtype)
            p[pre + "attn.wo"] = normal((d, d), res_std)
            p[pre + "attn.bo"] = np.zeros(d, dtype=self.dtype)
            p[pre + "ln2.gamma"] = np.ones(d, dtype=self.dtype)
            p[pre + "ln2.beta"] = np.zeros(d, dtype=self.dtype)
            p[pre + "ffn.w1"] = normal((d, f), std)
            p[pre + "ffn.b1"] = np.zeros(f, dtype=self.dtype)
            p[pre + "ffn.w2"] = normal((f, d), res_std)
            p[pre + "ffn.b2"] = np.zeros(d, dtype=self.dtype)
        p["ln_f.gamma"] = np.ones(d, dtype=self.dtype)
        p["ln_f.beta"] = np.zeros(d, dtype=self.dtype)
        return p

    @property
    def num_params(self) -> int:
        return sum(arr.size for arr in self.params.values())

    def param_names(self) -> list[str]:
        """Declaration order; fixed by construction of the params dict."""
        return list(self.params)

    def astype(self, dtype) -> "Transformer":
        params = {k: v.astype(dtype) for k, v in self.params.items()}
        return Transformer(self.config, dtype=dtype, params=params)

    def copy(self) -> "Transformer":
        return self.astype(self.dtype)

    # -- forward/backward ------------------------------------------------

    def forward_batch(self, tokens: np.ndarray, weights: dict | None = None):
        """Teacher-forced forward over a batch.

        tokens: (B, T) integer array. `weights` optionally overrides some
        parameters (used by the low-rank adapters). Returns (logits, cache)
        where logits is (B, T, vocab) and cache holds every intermediate
        needed by backward().
        """
        cfg = self.config
        tokens = np.asarray(tokens)
        if tokens.ndim != 2:
            raise ValueError("forward_batch expects a (B, T) token array")
        b, t = tokens.shape
        if t > cfg.max_seq:
            raise SequenceTooLong(f"sequence length {t} > max_seq {cfg.max_seq}")
        w = self.params if weights is None else {**self.params, **weights}
        h, hd = cfg.heads, cfg.head_dim
        scale = np.asarray(1.0 / np.sqrt(hd), dtype=self.dtype)

        x = w["tok_emb"][tokens] + w["pos_emb"][:t]
        blocks = []
        for i in range(cfg.layers):
            pre = f"blocks.{i}."
            x_in = x
            h1, mean1, rstd1 = kernels.layernorm_forward(
                x, w[pre + "ln1.gamma"], w[pre + "ln1.beta"]
            )
            q = h1 @ w[pre + "attn.wq"] + w[pre + "attn.bq"]
            k = h1 @ w[pre + "attn.wk"] + w[pre + "attn.bk"]
            v = h1 @ w[pre + "attn.wv"] + w[pre + "attn.bv"]
            qh = q.reshape(b, t, h, hd).transpose(0, 2, 1, 3)
            kh = k.reshape(b, t, h, hd).transpose(0, 2, 1, 3)
            vh = v.reshape(b, t, h, hd).transpose(0, 2, 1, 3)
            scores = qh @ kh.transpose(0, 1, 3, 2)
            scores *= scale
            probs = kernels.causal_softmax(scores)
            ctx = probs @ vh
            merged = ctx.transpose(0, 2, 1, 3).reshape(b, t, cfg.d_model)
            attn_out = merged @ w[pre + "attn.wo"] + w[pre + "attn.bo"]
            x_mid = x_in + attn_out
            h2, mean2, rstd2 = kernels.layernorm_forward(
                x_mid, w[pre + "ln2.gamma"], w[pre + "ln2.beta"]
            )
            a1 = h2 @ w[pre + "ffn.w1"] + w[pre + "ffn.b1"]
            g = kernels.gelu_forward(a1)
            x = x_mid + g @ w[pre + "ffn.w2"] + w[pre + "ffn.b2"]
            blocks.append(
                dict(x_in=x_in, mean1=mean1, rstd1=rstd1, h1=h1, qh=qh, kh=kh,
                     vh=vh, probs=probs, merged=merged, x_mid=x_mid, mean2=mean2,
                     rstd2=rstd2, h2=h2, a1=a1, g=g)
            )
        hf, meanf, rstdf = kernels.layernorm_forward(x, w["ln_f.gamma"], w["ln_f.beta"])
        logits = hf @ w["tok_emb"].T
        cache = dict(tokens=tokens, weights=w, blocks=blocks, x_f=x,
                     meanf=meanf, rstdf=rstdf, hf=hf, scale=scale)
        return logits, cache

    def backward(self, cache: dict, dlogits: np.ndarray) -> dict:
        """Gradients of a scalar loss wrt every parameter, given dloss/dlogits."""
        cfg = self.config
        w = cache["weights"]
        tokens = cache["tokens"]
        b, t = tokens.shape
        h, hd, d = cfg.heads, cfg.head_dim, cfg.d_model
        scale = cache["scale"]
        grads = {name: np.zeros_like(arr) for name, arr in self.params.items()}

        dl = dlogits.reshape(b * t, -1)
        grads["tok_emb"] += dl.T @ cache["hf"].reshape(b * t, d)
        dhf = dlogits @ w["tok_emb"]
        dx, dgamma, dbeta = kernels.layernorm_backward(
            dhf, cache["x_f"], w["ln_f.gamma"], cache["meanf"], cache["rstdf"]
        )
        grads["ln_f.gamma"] += dgamma
        grads["ln_f.beta"] += dbeta

        for i in reversed(range(cfg.layers)):
            pre = f"blocks.{i}."
            blk = cache["blocks"][i]
            # ffn branch: x = x_mid + gelu(h2 @ w1 + b1) @ w2 + b2
            flat = lambda a: a.reshape(b * t, -1)
            grads[pre + "ffn.w2"] += flat(blk["g"]).T @ flat(dx)
            grads[pre + "ffn.b2"] += dx.sum(axis=(0, 1))
            dg = dx @ w[pre + "ffn.w2"].T
            da1 = kernels.gelu_backward(blk["a1"], dg)
            grads[pre + "ffn.w1"] += flat(blk["h2"]).T @ flat(da1)
            grads[pre + "ffn.b1"] += da1.sum(axis=(0, 1))
            dh2 = da1 @ w[pre + "ffn.w1"].T
            dx_mid, dgamma, dbeta = kernels.layernorm_backward(
                dh2, blk["x_mid"], w[pre + "ln2.gamma"], blk["mean2"], blk["rstd2"]
            )
            grads[pre + "ln2.gamma"] += dgamma
            grads[pre + "ln2.beta"] += dbeta
            dx_mid += dx  # residual

            # attention branch: x_mid = x_in + (P @ v, merged) @ wo + bo
            grads[pre + "attn.wo"] += flat(blk["merged"]).T @ flat(dx_mid)
            grads[pre + "attn.bo"] += dx_mid.sum(axis=(0, 1))
            dmerged = dx_mid @ w[pre + "attn.wo"].T
            dctx = dmerged.reshape(b, t, h, hd).transpose(0, 2, 1, 3)
            dprobs = dctx @ blk["vh"].transpose(0, 1, 3, 2)
            dvh = blk["probs"].transpose(0, 1, 3, 2) @ dctx
            dscores = kernels.causal_softmax_backward(blk["probs"], dprobs)
            dscores *= scale
            dqh = dscores @ blk["kh"]
            dkh = dscores.transpose(0, 1, 3, 2) @ blk["qh"]
            dq = dqh.transpose(0, 2, 1, 3).reshape(b, t, d)
            dk = dkh.transpose(0, 2, 1, 3).reshape(b, t, d)
            dv = dvh.transpose(0, 2, 1, 3).reshape(b, t, d)
            h1f = flat(blk["h1"])
            grads[pre + "attn.wq"] += h1f.T @ flat(dq)
            grads[pre + "attn.bq"] += dq.sum(axis=(0, 1))
            grads[pre + "attn.wk"] += h1f.T @ flat(dk)
            grads[pre + "attn.bk"] += dk.sum(axis=(0, 1))
            grads[pre + "attn.wv"] += h1f.T @ flat(dv)
            grads[pre + "attn.bv"] += dv.sum(axis=(0, 1))
            dh1 = dq @ w[pre + "attn.wq"].T
            dh1 += dk @ w[pre + "attn.wk"].T
            dh1 += dv @ w[pre + "attn.wv"].T
            dx_in, dgamma, dbeta = kernels.layernorm_backward(
                dh1, blk["x_in"], w[pre + "ln1.gamma"], blk["mean1"], blk["rstd1"]
            )
            grads[pre + "ln1.gamma"] += dgamma
            grads[pre + "ln1.beta"] += dbeta
            dx = dx_mid + dx_in

        np.add.at(grads["tok_emb"], tokens, dx)
        grads["pos_emb"][:t] += dx.sum(axis=0)
        return grads

    def forward(self, tokens):
        """Single-sequence forward: (logits (n, vocab), AttentionTensor)."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 1:
            raise ValueError("forward expects a 1-D token sequence")
        logits, cache = self.forward_batch(tokens[None, :])
        probs = np.stack([blk["probs"][0] for blk in cache["blocks"]])
        return logits[0], AttentionTensor(probs=probs)
