"""Stratified and uniform minibatches and the discrepancy estimates built on them."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .kernels import NEG_CLAMP_TOL, EmbeddingSet, KernelSpec
from .partition import Stratification


@dataclass(frozen=True)
class StratifiedBatch:
    """One index per stratum with weights ``|S_h| / n``.

    ``n`` is the population the weights refer to. Uniform batches use
    ``n = k`` so the weighted estimators reduce to plain minibatch ones.
    """

    indices: np.ndarray
    weights: np.ndarray
    n: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if idx.shape != w.shape:
            raise ValueError("indices and weights must have equal length")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()}, not 1")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "weights", w)

    @property
    def k(self) -> int:
        return self.indices.size


class _StrataIndex:
    """Members grouped by stratum for vectorised draws."""

    def __init__(self, strat: Stratification):
        strat.require_complete()
        self.order = np.argsort(strat.labels, kind="stable")
        self.sizes = strat.sizes.astype(np.int64)
        self.offsets = np.concatenate(([0], np.cumsum(self.sizes)[:-1]))
        self.weights = self.sizes / strat.n
        self.n = strat.n

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        pos = (rng.random((size, self.sizes.size)) * self.sizes).astype(np.int64)
        np.minimum(pos, self.sizes - 1, out=pos)
        return self.order[self.offsets + pos]


def draw_stratified(strat: Stratification, rng: np.random.Generator) -> StratifiedBatch:
    """Draw one member uniformly from every stratum."""
    index = _StrataIndex(strat)
    return StratifiedBatch(index.draw(rng, 1)[0], index.weights, strat.n)


def draw_stratified_many(strat: Stratification, rng: np.random.Generator, size: int) -> np.ndarray:
    """``(size, k)`` array of independent stratified draws (indices only)."""
    return _StrataIndex(strat).draw(rng, size)


def uniform_batch(points, k: int, rng: np.random.Generator) -> StratifiedBatch:
    """``k`` distinct points, each with weight ``1/k``."""
    n = points if isinstance(points, (int, np.integer)) else len(points)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    idx = rng.choice(n, size=k, replace=False)
    return StratifiedBatch(idx, np.full(k, 1.0 / k), k)


def _data(points) -> np.ndarray:
    return points.data if isinstance(points, EmbeddingSet) else np.atleast_2d(np.asarray(points, dtype=float))


def estimate_mean_embedding(batch: StratifiedBatch, points, feature_map: Optional[Callable] = None) -> np.ndarray:
    """Weighted sum of explicit features; the identity map if ``feature_map`` is None."""
    Z = _data(points)[batch.indices]
    Phi = Z if feature_map is None else np.atleast_2d(feature_map(Z))
    return batch.weights @ Phi


def estimate_mmd(batch_s: StratifiedBatch, batch_t: StratifiedBatch, points_s, points_t,
                 spec: KernelSpec) -> float:
    """Squared feature-space distance between the two weighted mean embeddings, via the kernel."""
    Zs = _data(points_s)[batch_s.indices]
    Zt = _data(points_t)[batch_t.indices]
    ws, wt = batch_s.weights, batch_t.weights
    val = ws @ spec.pairwise(Zs, Zs) @ ws + wt @ spec.pairwise(Zt, Zt) @ wt \
        - 2.0 * ws @ spec.pairwise(Zs, Zt) @ wt
    if val < -NEG_CLAMP_TOL:
        raise ArithmeticError(f"MMD estimate {val} is negative beyond tolerance")
    return max(float(val), 0.0)


def weighted_covariance(batch: StratifiedBatch, points) -> np.ndarray:
    """``1/(n-1) * sum_h |S_h| (z_h - mu_hat)(z_h - mu_hat)^T`` with the weighted batch mean."""
    if batch.n < 2:
        raise ValueError("bias-corrected covariance needs n >= 2")
    Z = _data(points)[batch.indices]
    Zc = Z - batch.weights @ Z
    return (batch.n / (batch.n - 1.0)) * (Zc.T * batch.weights) @ Zc


def estimate_coral(batch_s: StratifiedBatch, batch_t: StratifiedBatch, points_s, points_t) -> float:
    """Squared Frobenius distance between the weighted source and target covariances."""
    Rs = weighted_covariance(batch_s, points_s)
    Rt = weighted_covariance(batch_t, points_t)
    if Rs.shape != Rt.shape:
        raise ValueError(f"dimension mismatch: {Rs.shape} vs {Rt.shape}")
    return float(((Rs - Rt) ** 2).sum())


def full_mmd(points_s, points_t, spec: KernelSpec) -> float:
    Zs, Zt = _data(points_s), _data(points_t)
    val = spec.pairwise(Zs, Zs).mean() + spec.pairwise(Zt, Zt).mean() - 2.0 * spec.pairwise(Zs, Zt).mean()
    return max(float(val), 0.0)


def full_coral(points_s, points_t) -> float:
    Rs = np.cov(_data(points_s), rowvar=False, ddof=1)
    Rt = np.cov(_data(points_t), rowvar=False, ddof=1)
    return float(((np.atleast_2d(Rs) - np.atleast_2d(Rt)) ** 2).sum())


@dataclass(frozen=True)
class ResampleSchedule:
    period: int = 100
    mode: str = "fixed"

    def __post_init__(self):
        if self.period < 1:
            raise ValueError(f"period must be >= 1, got {self.period}")
        if self.mode != "fixed":
            raise ValueError(f"unknown schedule mode {self.mode!r}")


def schedule_should_recluster(iteration: int, schedule: ResampleSchedule) -> bool:
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    return iteration % schedule.period == 0


class StratifiedSampler:
    """Paired source/target stratified minibatches with periodic re-stratification.

    ``restratify(iteration)`` must return a fresh ``(source, target)`` pair of
    stratifications; it is called whenever the schedule fires, including at
    iteration 0 when no initial stratifications are given. Both sides must
    have the same number of strata.
    """

    def __init__(self, restratify: Callable[[int], tuple], seed: int = 0,
                 schedule: ResampleSchedule = ResampleSchedule(),
                 source: Stratification | None = None, target: Stratification | None = None):
        self._restratify = restratify
        self.schedule = schedule
        self.rng = np.random.default_rng(seed)
        self.iteration = 0
        self._strata = None
        if source is not None and target is not None:
            self._install(source, target)

    def _install(self, source, target):
        if source.k != target.k:
            raise ValueError(f"source has {source.k} strata, target has {target.k}")
        self._strata = (_StrataIndex(source), _StrataIndex(target))

    @property
    def k(self) -> int:
        return self._strata[0].sizes.size

    def next(self):
        """Return ``(iteration, source_batch, target_batch)`` and advance."""
        it = self.iteration
        if self._strata is None or (it > 0 and schedule_should_recluster(it, self.schedule)):
            self._install(*self._restratify(it))
        batches = tuple(
            StratifiedBatch(idx.draw(self.rng, 1)[0], idx.weights, idx.n) for idx in self._strata
        )
        self.iteration += 1
        return (it,) + batches


def write_batch_log(path, records) -> None:
    """Write ``(iteration, batch, estimate)`` records as CSV; indices and weights are ';'-joined."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "indices", "weights", "estimate"])
        for it, batch, est in records:
            w.writerow([
                it,
                ";".join(str(int(i)) for i in batch.indices),
                ";".join(repr(float(x)) for x in batch.weights),
                repr(float(est)),
            ])
