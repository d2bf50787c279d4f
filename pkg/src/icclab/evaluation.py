"""Hungarian-matched accuracy and the per-cell evaluation harness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .codec import MalformedOutput
from .episodes import Episode, episode_rng, permute_episode

MAX_LABELS = 16


class NonSquare(ValueError):
    """Assignment costs must form a square matrix."""


class LengthMismatch(ValueError):
    """Predicted and true label sequences differ in length."""


def hungarian(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost row-to-column assignment of a square matrix.

    Returns perm with perm[i] = column of row i. Among equally cheap
    assignments the lexicographically smallest permutation wins, pinned
    down by greedily fixing each row to its lowest feasible column.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise NonSquare(f"cost must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost entries must be finite")
    k = cost.shape[0]
    rows, cols = linear_sum_assignment(cost)
    best = float(cost[rows, cols].sum())
    tol = 1e-9 * (1.0 + abs(best))

    perm = np.empty(k, dtype=np.int64)
    free = list(range(k))
    prefix = 0.0
    for i in range(k):
        for j in free:
            rest_cols = [c for c in free if c != j]
            sub_total = 0.0
            if rest_cols:
                sub = cost[np.ix_(range(i + 1, k), rest_cols)]
                rr, cc = linear_sum_assignment(sub)
                sub_total = float(sub[rr, cc].sum())
            if prefix + cost[i, j] + sub_total <= best + tol:
                perm[i] = j
                prefix += float(cost[i, j])
                free.remove(j)
                break
    return perm


def _as_labels(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.int64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    if arr.size and (arr.min() < 0 or arr.max() >= MAX_LABELS):
        raise ValueError(f"{name} values must lie in [0, {MAX_LABELS})")
    return arr


def clustering_accuracy(pred, truth) -> float:
    """Fraction of points whose label matches under the best global relabeling."""
    pred = _as_labels(pred, "pred")
    truth = _as_labels(truth, "truth")
    if len(pred) != len(truth):
        raise LengthMismatch(f"pred has {len(pred)} labels, truth has {len(truth)}")
    m = len(pred)
    if m == 0:
        raise LengthMismatch("empty label sequences")
    k = int(max(pred.max(), truth.max())) + 1
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (pred, truth), 1)
    perm = hungarian(-confusion.astype(np.float64))
    matched = int(confusion[np.arange(k), perm].sum())
    return matched / m


@dataclass(frozen=True)
class CellStats:
    method: str
    df: str
    c: int
    dim: int
    n: int
    n_failures: int
    mean_acc: float  # failures scored as zero-matched
    stderr: float  # sample stddev / sqrt(n)
    valid_mean: float | None  # over parseable episodes only

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "df": self.df,
            "c": self.c,
            "dim": self.dim,
            "n": self.n,
            "n_failures": self.n_failures,
            "mean_acc": self.mean_acc,
            "stderr": self.stderr,
            "valid_mean": self.valid_mean,
        }


@dataclass
class EvalReport:
    cells: dict[tuple, CellStats] = field(default_factory=dict)
    permutation_stats: dict[str, dict] = field(default_factory=dict)

    def rows(self) -> list[CellStats]:
        return [self.cells[k] for k in sorted(self.cells)]

    def merge(self, other: "EvalReport") -> "EvalReport":
        merged = EvalReport(dict(self.cells), dict(self.permutation_stats))
        merged.cells.update(other.cells)
        merged.permutation_stats.update(other.permutation_stats)
        return merged


def _stderr(values: np.ndarray) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))


def episode_accuracy(method, ep: Episode) -> tuple[float, bool]:
    """Score one episode; unparseable output counts as zero matched."""
    try:
        labels = method(ep)
    except MalformedOutput:
        return 0.0, True
    return clustering_accuracy(labels, ep.labels), False


def evaluate(method, episodes: list[Episode], name: str = "method") -> EvalReport:
    """Per-cell mean accuracy with standard errors, grouped by (df, c, dim)."""
    by_cell: dict[tuple, list[tuple[float, bool]]] = {}
    for ep in episodes:
        key = (name, ep.spec.df_label, ep.spec.num_clusters, ep.spec.dim)
        by_cell.setdefault(key, []).append(episode_accuracy(method, ep))
    report = EvalReport()
    for key in sorted(by_cell):
        scored = by_cell[key]
        accs = np.array([a for a, _ in scored])
        valid = np.array([a for a, failed in scored if not failed])
        report.cells[key] = CellStats(
            method=key[0],
            df=key[1],
            c=key[2],
            dim=key[3],
            n=len(scored),
            n_failures=sum(failed for _, failed in scored),
            mean_acc=float(accs.mean()),
            stderr=_stderr(accs),
            valid_mean=float(valid.mean()) if len(valid) else None,
        )
    return report


def permutation_sensitivity(
    method,
    episodes: list[Episode],
    n_perms: int = 5,
    seed: int = 0,
) -> dict:
    """Re-evaluate each episode on independently permuted point orders and
    report the mean accuracy and the mean per-episode stddev."""
    if n_perms < 2:
        raise ValueError(f"n_perms must be >= 2, got {n_perms}")
    all_accs = []
    stds = []
    for i, ep in enumerate(episodes):
        accs = []
        for p in range(n_perms):
            rng = episode_rng(ep.spec, 7919, seed, i, p)
            pep = permute_episode(ep, rng)
            acc, _ = episode_accuracy(method, pep)
            accs.append(acc)
        all_accs.extend(accs)
        stds.append(float(np.std(accs, ddof=1)))
    return {
        "mean_acc": float(np.mean(all_accs)),
        "mean_std": float(np.mean(stds)),
        "n_episodes": len(episodes),
        "n_perms": n_perms,
    }
