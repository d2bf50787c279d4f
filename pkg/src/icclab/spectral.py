"""Causal attention -> symmetric affinity -> normalized spectral clustering."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baselines import KMeansConfig, kmeans


class DegenerateAffinity(ValueError):
    """Affinity has no usable structure (every row is zero)."""


@dataclass
class AffinityMatrix:
    w: np.ndarray
    source: str = "precomputed"
    zero_rows: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 2 or self.w.shape[0] != self.w.shape[1]:
            raise ValueError(f"affinity must be square, got {self.w.shape}")
        if not np.array_equal(self.w, self.w.T):
            raise ValueError("affinity must be exactly symmetric")
        if self.w.size and self.w.min() < 0:
            raise ValueError("affinity entries must be nonnegative")


def preprocess_affinity(a_ii: np.ndarray, mode: str = "multiply") -> AffinityMatrix:
    """Turn a causal row-biased score matrix into a symmetric affinity.

    Row-normalize, rescale row i by its structural entry count i+1 (early
    rows otherwise dominate after normalization), then symmetrize. `mode`
    "divide" flips the rescale direction for ablation.
    """
    if mode not in ("multiply", "divide"):
        raise ValueError(f"mode must be 'multiply' or 'divide', got {mode!r}")
    a = np.asarray(a_ii, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"a_ii must be square, got {a.shape}")
    if a.size and a.min() < 0:
        raise ValueError("a_ii entries must be nonnegative")
    m = a.shape[0]
    scaled = np.zeros_like(a)
    zero_rows = []
    for i in range(m):
        s = a[i].sum()
        if s == 0.0:
            zero_rows.append(i)
            continue
        count = i + 1
        factor = count if mode == "multiply" else 1.0 / count
        scaled[i] = a[i] / s * factor
    w = (scaled + scaled.T) / 2.0
    return AffinityMatrix(w=w, source="attention", zero_rows=zero_rows)


def rbf_affinity(points: np.ndarray, gamma: float) -> AffinityMatrix:
    """W[i][j] = exp(-gamma * squared distance)."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    points = np.asarray(points, dtype=np.float64)
    d2 = np.sum(np.square(points[:, None, :] - points[None, :, :]), axis=2)
    d2 = (d2 + d2.T) / 2.0
    return AffinityMatrix(w=np.exp(-gamma * d2), source="rbf")


def spectral_embedding(w: np.ndarray, c: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eigenpairs of L_sym = I - D^{-1/2} W D^{-1/2} and the row-normalized
    m x c embedding from the c smallest eigenvalues. Rows must have degree > 0."""
    degree = w.sum(axis=1)
    if np.any(degree <= 0):
        raise DegenerateAffinity("zero-degree row in affinity")
    inv_sqrt = 1.0 / np.sqrt(degree)
    lap = np.eye(len(w)) - inv_sqrt[:, None] * w * inv_sqrt[None, :]
    lap = (lap + lap.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(lap)
    vals = eigvals[:c]
    vecs = eigvecs[:, :c]
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    embedding = np.where(norms > 0, vecs / np.where(norms == 0, 1.0, norms), 0.0)
    return vals, vecs, embedding


def spectral(affinity, c: int, seed: int = 0) -> np.ndarray:
    """Normalized spectral clustering of an affinity into c groups.

    Zero-affinity points are excluded from the embedding and then copy the
    label of the nearest (by index) embedded point. All-zero affinity is
    unrecoverable and raises DegenerateAffinity.
    """
    if isinstance(affinity, AffinityMatrix):
        w = affinity.w
    else:
        w = np.asarray(affinity, dtype=np.float64)
        if not np.array_equal(w, w.T):
            raise ValueError("affinity must be exactly symmetric")
    m = w.shape[0]
    if not 1 <= c <= m:
        raise ValueError(f"need 1 <= c <= m, got c={c}, m={m}")

    degree = w.sum(axis=1)
    alive = np.flatnonzero(degree > 0)
    dead = np.flatnonzero(degree <= 0)
    if len(alive) == 0:
        raise DegenerateAffinity("every affinity row is zero")
    if len(alive) < c:
        raise DegenerateAffinity(f"only {len(alive)} connected points for c={c}")

    sub = w[np.ix_(alive, alive)]
    _, _, embedding = spectral_embedding(sub, c)
    sub_labels, _, _ = kmeans(embedding, KMeansConfig(k=c, restarts=10, seed=seed))

    labels = np.empty(m, dtype=np.int64)
    labels[alive] = sub_labels
    for i in dead:
        j = alive[np.argmin(np.abs(alive - i))]
        labels[i] = labels[j]
    return labels


def attention_clusterer(mode: str = "multiply"):
    """(a_ii, c, seed) -> labels adapter for layer sweeps."""

    def clusterer(a_ii: np.ndarray, c: int, seed: int = 0) -> np.ndarray:
        return spectral(preprocess_affinity(a_ii, mode=mode), c, seed=seed)

    return clusterer
