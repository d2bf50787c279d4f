"""Aggregate token-level attention into data-level block matrices.

For an episode with m points, three m x m views of one layer's attention:
  a_ii[i][j] = mean of A over the token-span rectangle of points i and j
  a_oi[i][j] = mean of A[label_i, q] over point j's prompt span
  a_oo[i][j] = A[label_i, label_j]
Label rows/columns exist only for supervised encodings; instruction and
structural tokens are never read because only span/label positions index A.
"""

from __future__ import annotations

import json

import numpy as np

from .codec import TokenizedEpisode
from .model.network import AttentionTensor

MEAN_HEADS = "mean"


class MissingLabelPositions(ValueError):
    """Label-row aggregation requested on a prompt-only encoding."""


class AggregatedAttention:
    def __init__(self, a_ii, a_oi, a_oo, layer, head_mode):
        self.a_ii = a_ii
        self._a_oi = a_oi
        self._a_oo = a_oo
        self.layer = layer
        self.head_mode = head_mode

    @property
    def num_points(self) -> int:
        return self.a_ii.shape[0]

    @property
    def a_oi(self) -> np.ndarray:
        if self._a_oi is None:
            raise MissingLabelPositions("encoding has no label positions")
        return self._a_oi

    @property
    def a_oo(self) -> np.ndarray:
        if self._a_oo is None:
            raise MissingLabelPositions("encoding has no label positions")
        return self._a_oo

    def has_label_blocks(self) -> bool:
        return self._a_oi is not None

    def to_json(self, labels=None) -> str:
        doc = {
            "a_ii": self.a_ii.tolist(),
            "a_oi": self._a_oi.tolist() if self._a_oi is not None else None,
            "a_oo": self._a_oo.tolist() if self._a_oo is not None else None,
            "layer": self.layer,
            "head_mode": self.head_mode,
            "labels": None if labels is None else [int(l) for l in labels],
        }
        return json.dumps(doc)

    @staticmethod
    def from_json(line: str) -> tuple["AggregatedAttention", list | None]:
        doc = json.loads(line)
        agg = AggregatedAttention(
            a_ii=np.array(doc["a_ii"], dtype=np.float64),
            a_oi=None if doc["a_oi"] is None else np.array(doc["a_oi"], dtype=np.float64),
            a_oo=None if doc["a_oo"] is None else np.array(doc["a_oo"], dtype=np.float64),
            layer=doc["layer"],
            head_mode=doc["head_mode"],
        )
        return agg, doc.get("labels")


def aggregate(
    attn: AttentionTensor,
    tok: TokenizedEpisode,
    layer: int,
    head_mode=MEAN_HEADS,
) -> AggregatedAttention:
    """Span-average one layer's attention into the m x m data-level blocks."""
    if not 0 <= layer < attn.num_layers:
        raise ValueError(f"layer {layer} out of range for {attn.num_layers}-layer tensor")
    if head_mode == MEAN_HEADS:
        a = attn.layer_mean(layer)
    else:
        h = int(head_mode)
        if not 0 <= h < attn.num_heads:
            raise ValueError(f"head {h} out of range for {attn.num_heads} heads")
        a = attn.layer(layer)[h]
    a = np.asarray(a, dtype=np.float64)
    spans = tok.spans
    m = len(spans)
    if max(e for _, e in spans) >= a.shape[0]:
        raise ValueError("attention tensor shorter than the episode's spans")

    a_ii = np.empty((m, m))
    for i, (si, ei) in enumerate(spans):
        for j, (sj, ej) in enumerate(spans):
            a_ii[i, j] = a[si : ei + 1, sj : ej + 1].mean()

    a_oi = a_oo = None
    if tok.label_positions is not None:
        t = np.asarray(tok.label_positions)
        if t.max() >= a.shape[0]:
            raise ValueError("attention tensor shorter than the label positions")
        a_oi = np.empty((m, m))
        for j, (sj, ej) in enumerate(spans):
            a_oi[:, j] = a[t, sj : ej + 1].mean(axis=1)
        a_oo = a[np.ix_(t, t)].copy()
    return AggregatedAttention(a_ii, a_oi, a_oo, layer, head_mode)


def block_contrast(a_ii: np.ndarray, labels) -> float:
    """Mean strictly-lower-triangular attention within clusters minus across
    clusters; 0 when either pair set is empty."""
    labels = np.asarray(labels)
    m = len(labels)
    if a_ii.shape != (m, m):
        raise ValueError(f"a_ii shape {a_ii.shape} does not match {m} labels")
    ii, jj = np.tril_indices(m, k=-1)
    if len(ii) == 0:
        return 0.0
    same = labels[ii] == labels[jj]
    vals = a_ii[ii, jj]
    if not same.any() or same.all():
        return 0.0
    return float(vals[same].mean() - vals[~same].mean())


def layer_sweep(model, episodes, clusterer) -> dict:
    """Per-layer mean Hungarian accuracy of clustering each layer's a_ii.

    `clusterer(a_ii, c, seed)` returns labels. Episodes whose pipeline raises
    are excluded from every layer's mean and counted once.
    """
    from .codec import encode_prompt
    from .evaluation import clustering_accuracy

    if not episodes:
        raise ValueError("layer_sweep needs at least one episode")
    num_layers = model.config.layers
    per_layer: list[list[float]] = [[] for _ in range(num_layers)]
    n_failed = 0
    for ep in episodes:
        tok = encode_prompt(ep)
        try:
            _, attn = model.forward(tok.tokens)
            accs = []
            for layer in range(num_layers):
                agg = aggregate(attn, tok, layer)
                pred = clusterer(agg.a_ii, ep.spec.num_clusters, 0)
                accs.append(clustering_accuracy(pred, ep.labels))
        except Exception:
            n_failed += 1
            continue
        for layer, acc in enumerate(accs):
            per_layer[layer].append(acc)
    means = [float(np.mean(col)) if col else float("nan") for col in per_layer]
    return {
        "layer_means": means,
        "best_layer": int(np.nanargmax(means)),
        "n_failed": n_failed,
        "n_used": len(per_layer[0]),
    }
