"""Stratification builders.

The main routine is a Lloyd-style kernel k-means whose assignment step
minimises ``sum_j |S_j| * sum_{i in S_j} D_ij`` rather than the plain
within-cluster sum, so large clusters are penalised. The assignment step is
solved approximately by a randomised greedy pass (:func:`greedy_assign`); an
exhaustive solver (:func:`brute_force_assign`) is provided for tiny instances.

Labels are 0-based throughout the Python API; the CSV format writes them 1-based.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ._rng import sub_seed, trial_permutations
from .kernels import EmbeddingSet, GramMatrix

BRUTE_FORCE_LIMIT = 10**7
_TRIAL_CHUNK = 4096


class CapacityError(RuntimeError):
    """Instance too large for an exhaustive computation."""


class Stratification:
    """Assignment of ``n`` points to ``k`` strata.

    Clustering builders in this module repair empty strata before returning.
    The assignment solvers :func:`greedy_assign`, :func:`brute_force_assign`
    and :func:`nearest_assign` return the minimiser of their objective as is. Use :attr:`complete` or
    :meth:`require_complete` where every stratum must be populated.
    """

    __slots__ = ("labels", "k", "sizes")

    def __init__(self, labels, k: int):
        labels = np.array(labels, dtype=np.int64).ravel()
        k = int(k)
        if k < 1:
            raise ValueError(f"k must be positive, got {k}")
        if labels.size < 1:
            raise ValueError("a stratification needs at least one point")
        if labels.min() < 0 or labels.max() >= k:
            raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
        labels.setflags(write=False)
        sizes = np.bincount(labels, minlength=k)
        sizes.setflags(write=False)
        self.labels = labels
        self.k = k
        self.sizes = sizes

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def complete(self) -> bool:
        return bool(self.sizes.min() >= 1)

    def require_complete(self) -> "Stratification":
        if not self.complete:
            empty = np.flatnonzero(self.sizes == 0).tolist()
            raise ValueError(f"strata {empty} are empty")
        return self

    def members(self, h: int) -> np.ndarray:
        return np.flatnonzero(self.labels == h)

    def one_hot(self) -> np.ndarray:
        U = np.zeros((self.n, self.k))
        U[np.arange(self.n), self.labels] = 1.0
        return U

    def __eq__(self, other):
        if not isinstance(other, Stratification):
            return NotImplemented
        return self.k == other.k and np.array_equal(self.labels, other.labels)

    def __hash__(self):
        return hash((self.k, self.labels.tobytes()))

    def __repr__(self):
        return f"Stratification(n={self.n}, k={self.k}, sizes={self.sizes.tolist()})"


@dataclass(frozen=True)
class GreedyConfig:
    """Knobs for :func:`greedy_assign`.

    ``parallel_block`` rows are assigned against the same snapshot of interim
    stratum sizes; 1 is the purely sequential greedy pass.
    """

    trials: int = 100
    parallel_block: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.parallel_block < 1:
            raise ValueError(f"parallel_block must be >= 1, got {self.parallel_block}")


def _check_distances(D) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] < 1 or D.shape[1] < 1:
        raise ValueError(f"distance matrix must be (n, k), got shape {D.shape}")
    if not np.all(np.isfinite(D)):
        raise ValueError("distance matrix has non-finite entries")
    return D


def _repair_empty(labels: np.ndarray, k: int, own_dist: np.ndarray) -> np.ndarray:
    """Fill each empty stratum with the worst-fitting point of a stratum that can spare one."""
    labels = labels.copy()
    sizes = np.bincount(labels, minlength=k)
    movable = np.ones(labels.size, dtype=bool)
    for h in np.flatnonzero(sizes == 0):
        cand = np.flatnonzero(movable & (sizes[labels] >= 2))
        if cand.size == 0:
            raise ValueError(f"cannot populate {k} strata from {labels.size} points")
        i = cand[np.argmax(own_dist[cand])]
        sizes[labels[i]] -= 1
        labels[i] = h
        sizes[h] += 1
        movable[i] = False
    return labels


def _sq_dist_to_point(K: np.ndarray, c: int) -> np.ndarray:
    return np.maximum(np.diag(K) - 2.0 * K[:, c] + K[c, c], 0.0)


def _dsquared_centers(n: int, k: int, rng: np.random.Generator, dist_to) -> list:
    centers = [int(rng.integers(n))]
    closest = dist_to(centers[0])
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            c = int(rng.choice(n, p=closest / total))
        else:
            # Remaining points coincide with chosen centers.
            free = np.setdiff1d(np.arange(n), centers)
            c = int(rng.choice(free))
        centers.append(c)
        closest = np.minimum(closest, dist_to(c))
    return centers


def kmeanspp_seed(g: GramMatrix, k: int, seed: int = 0) -> Stratification:
    """Kernel k-means++: D^2-weighted centres in feature space, then nearest-centre labels."""
    K = g.values
    n = K.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    centers = _dsquared_centers(n, k, rng, lambda c: _sq_dist_to_point(K, c))
    diag = np.diag(K)
    C = np.asarray(centers)
    D = np.maximum(diag[:, None] - 2.0 * K[:, C] + diag[C][None, :], 0.0)
    labels = D.argmin(axis=1)
    labels[C] = np.arange(k)
    return Stratification(_repair_empty(labels, k, D[np.arange(n), labels]), k)


def distance_update(g: GramMatrix, strat: Stratification) -> np.ndarray:
    """(n, k) squared feature-space distances from every point to every stratum centroid."""
    K = g.values
    if K.shape[0] != strat.n:
        raise ValueError(f"Gram matrix has {K.shape[0]} points, stratification has {strat.n}")
    if not strat.complete:
        raise RuntimeError(f"empty stratum in {strat!r}; centroid undefined")
    H = strat.one_hot() / strat.sizes
    KH = K @ H
    centroid_norms = np.einsum("ij,ij->j", H, KH)
    D = np.diag(K)[:, None] - 2.0 * KH + centroid_norms[None, :]
    return np.maximum(D, 0.0)


def _trial_costs(D: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Weighted cost of each row of a (T, n) label array."""
    T, n = labels.shape
    k = D.shape[1]
    flat = (np.arange(T)[:, None] * k + labels).ravel()
    picked = D[np.arange(n)[None, :], labels].ravel()
    counts = np.bincount(flat, minlength=T * k).reshape(T, k)
    sums = np.bincount(flat, weights=picked, minlength=T * k).reshape(T, k)
    return (counts * sums).sum(axis=1)


def _greedy_chunk(D: np.ndarray, perms: np.ndarray, block: int) -> np.ndarray:
    T, n = perms.shape
    k = D.shape[1]
    labels = np.empty((T, n), dtype=np.int64)
    sizes = np.zeros((T, k))
    tix = np.arange(T)
    for start in range(0, n, block):
        rows = perms[:, start:start + block]
        cost = D[rows] * (sizes[:, None, :] + 1.0)
        choice = cost.argmin(axis=2)
        labels[tix[:, None], rows] = choice
        for col in range(choice.shape[1]):
            sizes[tix, choice[:, col]] += 1.0
    return labels


def _iter_trials(D: np.ndarray, cfg: GreedyConfig):
    n = D.shape[0]
    block = min(cfg.parallel_block, n)
    for first in range(0, cfg.trials, _TRIAL_CHUNK):
        count = min(_TRIAL_CHUNK, cfg.trials - first)
        perms = trial_permutations(cfg.seed, first, count, n)
        labels = _greedy_chunk(D, perms, block)
        yield labels, _trial_costs(D, labels)


def greedy_trial_costs(D, cfg: GreedyConfig) -> np.ndarray:
    """Raw weighted cost of every randomised greedy trial, in trial order."""
    D = _check_distances(D)
    return np.concatenate([costs for _, costs in _iter_trials(D, cfg)])


def greedy_assign(D, cfg: GreedyConfig = GreedyConfig()) -> Stratification:
    """Best of ``cfg.trials`` randomised greedy passes over the rows of ``D``.

    Each pass visits the rows in a random order and puts row ``i`` in the
    column minimising ``D[i, j] * (n_j + 1)``, where ``n_j`` is the interim
    size of stratum ``j`` (lowest column wins ties). Trial ``t`` depends only
    on ``(cfg.seed, t)``; the lowest-cost trial is kept, with the lowest
    trial index winning ties.
    """
    D = _check_distances(D)
    best_cost, best_labels = np.inf, None
    for labels, costs in _iter_trials(D, cfg):
        i = int(np.argmin(costs))
        if costs[i] < best_cost:
            best_cost, best_labels = costs[i], labels[i]
    return Stratification(best_labels, D.shape[1])


def nearest_assign(D) -> Stratification:
    """Unweighted baseline: every row to its closest column (no repair)."""
    D = _check_distances(D)
    return Stratification(D.argmin(axis=1), D.shape[1])


def weighted_cost(D_or_g, strat: Stratification) -> float:
    """Size-weighted within-stratum scatter.

    With a distance matrix the centroids are taken as frozen and the result is
    ``sum_j |S_j| * sum_{i in S_j} D_ij``. With a :class:`GramMatrix` the
    centroids are recomputed from ``strat`` itself.
    """
    if isinstance(D_or_g, GramMatrix):
        K = D_or_g.values
        if K.shape[0] != strat.n:
            raise ValueError("Gram matrix and stratification disagree on n")
        U = strat.one_hot()
        diag_sums = U.T @ np.diag(K)
        block_sums = np.einsum("ij,ik,kj->j", U, K, U)
        return float(np.maximum(strat.sizes * diag_sums - block_sums, 0.0).sum())
    D = _check_distances(D_or_g)
    if D.shape != (strat.n, strat.k):
        raise ValueError(f"distance matrix shape {D.shape} does not match stratification ({strat.n}, {strat.k})")
    return float(_trial_costs(D, strat.labels[None, :])[0])


def brute_force_assign(D) -> Stratification:
    """Exact minimiser of the weighted cost over all ``k**n`` labelings of ``D``.

    Empty strata are allowed, since the relaxed assignment problem does not
    forbid them. Ties go to the lexicographically smallest label vector.
    """
    D = _check_distances(D)
    n, k = D.shape
    if k**n > BRUTE_FORCE_LIMIT:
        raise CapacityError(f"{k}**{n} assignments exceeds the limit of {BRUTE_FORCE_LIMIT}")
    total = k**n
    powers = k ** np.arange(n - 1, -1, -1, dtype=np.int64)
    best_cost, best = np.inf, None
    chunk = 1 << 16
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        labels = (codes[:, None] // powers[None, :]) % k
        costs = _trial_costs(D, labels)
        i = int(np.argmin(costs))
        if costs[i] < best_cost:
            best_cost, best = costs[i], labels[i]
    return Stratification(best, k)


def lloyd_weighted(g: GramMatrix, k: int, cfg: GreedyConfig = GreedyConfig(),
                   max_iters: int = 100, init: Stratification | None = None):
    """Dynamically weighted kernel k-means.

    Starts from kernel k-means++ (or ``init``) and alternates
    :func:`distance_update` with :func:`greedy_assign`. Stops when the labels
    stop changing, when the size-weighted cost fails to drop by a relative
    1e-12 (the non-improving step is discarded), or after ``max_iters``.
    Strata the greedy step leaves empty are refilled before the cost check.

    Returns ``(stratification, iterations)``.
    """
    n = g.n
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    strat = init if init is not None else kmeanspp_seed(g, k, cfg.seed)
    cost = weighted_cost(g, strat)
    it = 0
    while it < max_iters:
        it += 1
        D = distance_update(g, strat)
        step_cfg = replace(cfg, seed=sub_seed(cfg.seed, it))
        new = greedy_assign(D, step_cfg)
        new = Stratification(_repair_empty(new.labels, k, D[np.arange(n), new.labels]), k)
        if new == strat:
            break
        new_cost = weighted_cost(g, new)
        if new_cost > cost - 1e-12 * abs(cost):
            break
        strat, cost = new, new_cost
    return strat, it


def kernel_kmeans(g: GramMatrix, k: int, seed: int = 0, max_iters: int = 100):
    """Ordinary kernel k-means (nearest-centroid assignment), same seeding as :func:`lloyd_weighted`.

    Returns ``(stratification, iterations)``.
    """
    n = g.n
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    strat = kmeanspp_seed(g, k, seed)
    it = 0
    while it < max_iters:
        it += 1
        D = distance_update(g, strat)
        labels = D.argmin(axis=1)
        labels = _repair_empty(labels, k, D[np.arange(n), labels])
        new = Stratification(labels, k)
        if new == strat:
            break
        strat = new
    return strat, it


def within_ss(X: np.ndarray, strat: Stratification) -> float:
    """Plain within-cluster sum of squares in coordinate space."""
    total = 0.0
    for h in range(strat.k):
        pts = X[strat.labels == h]
        if len(pts):
            total += float(((pts - pts.mean(axis=0)) ** 2).sum())
    return total


def _linear_seed(X: np.ndarray, k: int, rng) -> np.ndarray:
    sq = (X * X).sum(axis=1)

    def dist_to(c):
        return np.maximum(sq - 2.0 * X @ X[c] + sq[c], 0.0)

    centers = _dsquared_centers(X.shape[0], k, rng, dist_to)
    C = X[centers]
    D = np.maximum(sq[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :], 0.0)
    labels = D.argmin(axis=1)
    labels[centers] = np.arange(k)
    return _repair_empty(labels, k, D[np.arange(X.shape[0]), labels])


def linear_kmeans(points: EmbeddingSet, k: int, seed: int = 0, max_iters: int = 100,
                  return_seed: bool = False):
    """Standard Lloyd's k-means on raw coordinates with k-means++ seeding."""
    X = points.data if isinstance(points, EmbeddingSet) else np.asarray(points, dtype=float)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    labels = _linear_seed(X, k, rng)
    seed_strat = Stratification(labels, k)
    for _ in range(max_iters):
        onehot = np.zeros((n, k))
        onehot[np.arange(n), labels] = 1.0
        C = (onehot.T @ X) / onehot.sum(axis=0)[:, None]
        D = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        new = D.argmin(axis=1)
        new = _repair_empty(new, k, D[np.arange(n), new])
        if np.array_equal(new, labels):
            break
        labels = new
    strat = Stratification(labels, k)
    return (strat, seed_strat) if return_seed else strat


def write_stratification_csv(path, strat: Stratification, ids=None) -> None:
    ids = range(strat.n) if ids is None else ids
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["point_id", "label"])
        for pid, lab in zip(ids, strat.labels):
            w.writerow([pid, int(lab) + 1])


def read_stratification_csv(path, k: int | None = None):
    """Returns ``(ids, stratification)``; ``k`` defaults to the largest label."""
    ids, labels = [], []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if row:
                ids.append(row[0])
                labels.append(int(row[1]) - 1)
    labels = np.asarray(labels)
    return ids, Stratification(labels, k or int(labels.max()) + 1)
