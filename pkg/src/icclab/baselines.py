"""K-means baseline: k-means++ seeding, Lloyd iterations, best-of-restarts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .episodes import Episode


class TooFewPoints(ValueError):
    """Fewer points than requested clusters."""


@dataclass(frozen=True)
class KMeansConfig:
    k: int
    restarts: int = 10
    max_iter: int = 300
    tol: float = 1e-4  # squared total centroid shift
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")


def kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """First centroid uniform, later ones with probability proportional to squared
    distance to the nearest centroid chosen so far."""
    points = np.asarray(points, dtype=np.float64)
    m = len(points)
    if m < k:
        raise TooFewPoints(f"{m} points cannot seed {k} clusters")
    chosen = [int(rng.integers(m))]
    d2 = np.sum(np.square(points - points[chosen[0]]), axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0.0:
            idx = int(rng.choice(m, p=d2 / total))
        else:
            idx = int(rng.integers(m))  # all remaining points coincide
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum(np.square(points - points[idx]), axis=1))
    return points[chosen].copy()


def _assign(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = np.sum(np.square(points[:, None, :] - centroids[None, :, :]), axis=2)
    labels = np.argmin(d2, axis=1)  # ties go to the lowest cluster index
    return labels, d2[np.arange(len(points)), labels]


def lloyd(
    points: np.ndarray,
    centroids: np.ndarray,
    max_iter: int = 300,
    tol: float = 1e-4,
) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    """Alternate assignment and mean updates until the total squared centroid
    shift drops to tol. Returns (labels, centroids, inertia, inertia history)."""
    points = np.asarray(points, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64).copy()
    k = len(centroids)
    history: list[float] = []
    labels, dist2 = _assign(points, centroids)
    history.append(float(dist2.sum()))
    for _ in range(max_iter):
        new = centroids.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = points[members].mean(axis=0)
        # Empty clusters grab the point currently worst-served by its centroid.
        farthest = dist2.copy()
        for j in range(k):
            if not (labels == j).any():
                idx = int(np.argmax(farthest))
                new[j] = points[idx]
                farthest[idx] = 0.0
        shift = float(np.sum(np.square(new - centroids)))
        centroids = new
        labels, dist2 = _assign(points, centroids)
        history.append(float(dist2.sum()))
        if shift <= tol:
            break
    return labels.astype(np.int64), centroids, history[-1], history


def kmeans(points: np.ndarray, cfg: KMeansConfig) -> tuple[np.ndarray, np.ndarray, float]:
    """Best-of-restarts k-means; deterministic under cfg.seed, inertia ties
    keep the lowest restart index."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"points must be 2-D, got shape {points.shape}")
    if len(points) < cfg.k:
        raise TooFewPoints(f"{len(points)} points cannot form {cfg.k} clusters")
    best: tuple[np.ndarray, np.ndarray, float] | None = None
    for r in range(cfg.restarts):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, r]))
        init = kmeans_pp_init(points, cfg.k, rng)
        labels, centroids, inertia, _ = lloyd(points, init, cfg.max_iter, cfg.tol)
        if best is None or inertia < best[2]:
            best = (labels, centroids, inertia)
    return best


def kmeans_labeler(seed: int = 0, restarts: int = 10):
    """Episode -> labels adapter for the eval harness; k comes from the spec."""

    def method(ep: Episode) -> np.ndarray:
        cfg = KMeansConfig(k=ep.spec.num_clusters, restarts=restarts, seed=seed)
        labels, _, _ = kmeans(ep.points, cfg)
        return labels

    return method


def oracle_labeler():
    """Ground-truth labels; the order-blind reference method."""

    def method(ep: Episode) -> np.ndarray:
        return ep.labels.copy()

    return method
