"""Synthetic clustering episodes from heavy-tailed mixture distributions.

An episode is one clustering instance: m points in R^d with ground-truth
labels. Cluster centroids are drawn uniformly from [-10, 10] per coordinate
and points are centroid + i.i.d. per-coordinate noise from a Student-t,
lognormal, or Gaussian distribution. All coordinates are rounded to two
decimal places so that the text encoding round-trips exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

STUDENT_T = "student_t"
LOGNORMAL = "lognormal"
GAUSSIAN = "gaussian"
DISTRIBUTIONS = (STUDENT_T, LOGNORMAL, GAUSSIAN)

CENTROID_RANGE = 10.0


@dataclass(frozen=True)
class EpisodeSpec:
    """Recipe for one family of episodes.

    `length_range` is inclusive on both ends and lo must be >= num_clusters
    so that every cluster can be nonempty. `df` is required for student_t
    and ignored otherwise.
    """

    num_clusters: int
    dim: int
    distribution: str = STUDENT_T
    df: float | None = None
    length_range: tuple[int, int] = (10, 50)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.length_range
        if self.num_clusters < 1:
            raise ValueError(f"num_clusters must be >= 1, got {self.num_clusters}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.distribution == STUDENT_T and (self.df is None or self.df <= 0):
            raise ValueError("student_t requires df > 0")
        if lo < self.num_clusters:
            raise ValueError(f"length_range lo={lo} < num_clusters={self.num_clusters}")
        if hi < lo:
            raise ValueError(f"length_range hi={hi} < lo={lo}")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")

    @property
    def df_label(self) -> str:
        """Distribution label used for report cells: '1.25', '100', 'gaussian', ..."""
        if self.distribution == STUDENT_T:
            df = self.df
            return str(int(df)) if float(df) == int(df) else str(df)
        return self.distribution

    def to_dict(self) -> dict:
        return {
            "num_clusters": self.num_clusters,
            "dim": self.dim,
            "distribution": self.distribution,
            "df": self.df,
            "length_range": list(self.length_range),
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "EpisodeSpec":
        return EpisodeSpec(
            num_clusters=int(d["num_clusters"]),
            dim=int(d["dim"]),
            distribution=d["distribution"],
            df=None if d.get("df") is None else float(d["df"]),
            length_range=(int(d["length_range"][0]), int(d["length_range"][1])),
            seed=int(d["seed"]),
        )


@dataclass
class Episode:
    """One clustering instance: points (m, d), labels (m,), centroids (c, d)."""

    points: np.ndarray
    labels: np.ndarray
    centroids: np.ndarray
    spec: EpisodeSpec

    @property
    def num_points(self) -> int:
        return len(self.points)

    def pair_multiset(self) -> list[tuple]:
        """Sorted (point, label) pairs; order-independent identity of the episode."""
        return sorted((tuple(p), int(l)) for p, l in zip(self.points, self.labels))


def sample_centroids(c: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Draw c centroids with each coordinate uniform in [-10, 10]."""
    if c < 1 or d < 1:
        raise ValueError("c and d must be >= 1")
    return rng.uniform(-CENTROID_RANGE, CENTROID_RANGE, size=(c, d))


def _random_composition(m: int, c: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random composition of m into c positive parts.

    Drawn as c-1 distinct cut points in {1, ..., m-1}; every composition with
    all parts >= 1 is equally likely.
    """
    if c == 1:
        return np.array([m])
    cuts = np.sort(rng.choice(m - 1, size=c - 1, replace=False) + 1)
    return np.diff(np.concatenate(([0], cuts, [m])))


def _sample_noise(spec: EpisodeSpec, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    if spec.distribution == STUDENT_T:
        return rng.standard_t(spec.df, size=shape)
    if spec.distribution == GAUSSIAN:
        return rng.standard_normal(size=shape)
    # Lognormal noise recentered to mean zero: exp(z) - exp(0.5), z ~ N(0,1).
    return np.exp(rng.standard_normal(size=shape)) - np.exp(0.5)


def sample_episode(spec: EpisodeSpec, rng: np.random.Generator) -> Episode:
    """Sample one episode: random length, nonempty clusters, shuffled point order."""
    lo, hi = spec.length_range
    c, d = spec.num_clusters, spec.dim
    m = int(rng.integers(lo, hi + 1))
    sizes = _random_composition(m, c, rng)
    centroids = sample_centroids(c, d, rng)
    labels = np.repeat(np.arange(c), sizes)
    noise = _sample_noise(spec, (m, d), rng)
    points = centroids[labels] + noise
    perm = rng.permutation(m)
    points, labels = points[perm], labels[perm]
    return Episode(
        points=np.round(points, 2),
        labels=labels,
        centroids=centroids,
        spec=spec,
    )


def permute_episode(ep: Episode, rng: np.random.Generator) -> Episode:
    """Reorder points and labels by one shared random permutation."""
    perm = rng.permutation(ep.num_points)
    return Episode(
        points=ep.points[perm],
        labels=ep.labels[perm],
        centroids=ep.centroids,
        spec=ep.spec,
    )


def episode_rng(spec: EpisodeSpec, *stream: int) -> np.random.Generator:
    """Deterministic generator for (spec, substream); disjoint across substreams."""
    return np.random.default_rng(np.random.SeedSequence([spec.seed, *stream]))


def make_dataset(
    specs: Sequence[EpisodeSpec],
    count_per_spec: int,
    augment_permutations: int = 0,
) -> Iterator[Episode]:
    """Lazily yield `count_per_spec` episodes per spec, each followed by the
    requested number of permuted copies. Ordering is stable under fixed seeds.
    """
    if count_per_spec < 1:
        raise ValueError("count_per_spec must be >= 1")
    for spec in specs:
        for idx in range(count_per_spec):
            ep = sample_episode(spec, episode_rng(spec, idx))
            yield ep
            for j in range(augment_permutations):
                yield permute_episode(ep, episode_rng(spec, idx, 1 + j))


def paper_test_grid(seed: int = 0, count_hint: int = 100) -> list[EpisodeSpec]:
    """The evaluation grid: 7 df values x 4 cluster counts x 4 dims."""
    del count_hint  # count is supplied to make_dataset, kept for CLI symmetry
    specs = []
    for df in (1.0, 1.25, 1.5, 1.75, 2.0, 5.0, 100.0):
        for c in (2, 3, 4, 5):
            for d in (1, 2, 3, 4):
                specs.append(
                    EpisodeSpec(num_clusters=c, dim=d, distribution=STUDENT_T, df=df,
                                seed=_cell_seed(seed, df, c, d))
                )
    return specs


def paper_train_grid(seed: int = 1) -> list[EpisodeSpec]:
    """The fine-tuning grid: df in {1, 2, 5, 100} x c in 2..5 x d in 1..4."""
    specs = []
    for df in (1.0, 2.0, 5.0, 100.0):
        for c in (2, 3, 4, 5):
            for d in (1, 2, 3, 4):
                specs.append(
                    EpisodeSpec(num_clusters=c, dim=d, distribution=STUDENT_T, df=df,
                                seed=_cell_seed(seed, df, c, d))
                )
    return specs


def _cell_seed(base: int, df: float, c: int, d: int) -> int:
    # Stable per-cell seed; df quantized to hundredths to stay integral.
    return ((base * 1009 + int(round(df * 100))) * 31 + c) * 31 + d


def format_point(p: np.ndarray) -> str:
    """Render one point as '[x1, x2, ...]' with fixed two-decimal coordinates."""
    return "[" + ", ".join(f"{x:.2f}" for x in p) + "]"


def format_points(points: np.ndarray) -> str:
    """Render all points as a double list, the exact prompt representation."""
    return "[" + ", ".join(format_point(p) for p in points) + "]"


def episode_to_json(ep: Episode) -> str:
    """One JSON line per episode; point coordinates keep exactly 2 decimals."""
    points = format_points(ep.points)
    labels = json.dumps([int(x) for x in ep.labels])
    centroids = json.dumps([[float(x) for x in row] for row in ep.centroids])
    spec = json.dumps(ep.spec.to_dict())
    return f'{{"points": {points}, "labels": {labels}, "centroids": {centroids}, "spec": {spec}}}'


def episode_from_json(line: str) -> Episode:
    d = json.loads(line)
    return Episode(
        points=np.array(d["points"], dtype=np.float64).reshape(len(d["labels"]), -1),
        labels=np.array(d["labels"], dtype=np.int64),
        centroids=np.array(d["centroids"], dtype=np.float64),
        spec=EpisodeSpec.from_dict(d["spec"]),
    )


def save_episodes(path, episodes: Iterable[Episode]) -> int:
    """Write episodes as JSON-Lines; returns the number written."""
    n = 0
    with open(path, "w") as fh:
        for ep in episodes:
            fh.write(episode_to_json(ep) + "\n")
            n += 1
    return n


def load_episodes(path) -> list[Episode]:
    with open(path) as fh:
        return [episode_from_json(line) for line in fh if line.strip()]
