"""Closed-form and Monte Carlo variance of discrepancy estimators.

Covers the quadratic-form variance of the squared mean-embedding distance,
the variance of stratified (weighted) sample covariances of scalar data, the
rank-correlation error bounds for optimising a surrogate objective, and a
seeded Monte Carlo variance estimator.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.stats import rankdata

from ._rng import child_rng
from .kernels import GramMatrix
from .partition import Stratification, weighted_cost


@dataclass(frozen=True)
class GaussianSpec:
    """Mean vector and covariance of a Gaussian mean-embedding estimate."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match mean length {mean.size}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise ValueError("cov is not symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-10:
            raise ValueError("cov is not positive semi-definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def d(self) -> int:
        return self.mean.size


def quadratic_norm_variance(cov, shift) -> float:
    """Var(|X|^2) for X ~ N(shift, cov): 2 tr(cov^2) + 4 shift^T cov shift."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    shift = np.atleast_1d(np.asarray(shift, dtype=float))
    return float(2.0 * np.sum(cov * cov.T) + 4.0 * shift @ cov @ shift)


def var_mmd_hat(gs: GaussianSpec, gt: GaussianSpec) -> float:
    """Variance of the squared distance between independent Gaussian mean embeddings."""
    if gs.d != gt.d:
        raise ValueError(f"dimension mismatch: source {gs.d}, target {gt.d}")
    return max(quadratic_norm_variance(gs.cov + gt.cov, gs.mean - gt.mean), 0.0)


def isotropic_mmd_variance(total_var: float, d: int, shift, target_cov) -> float:
    """Same quantity as :func:`var_mmd_hat` for a source covariance ``(total_var / d) * I``.

    Written as a quadratic in ``total_var`` with non-negative coefficients,
    which makes it increasing in the source's total variance.
    """
    shift = np.atleast_1d(np.asarray(shift, dtype=float))
    St = np.atleast_2d(np.asarray(target_cov, dtype=float))
    V = float(total_var)
    return (2.0 / d) * V**2 + (4.0 / d) * V * (shift @ shift + np.trace(St)) \
        + 2.0 * np.trace(St @ St) + 4.0 * shift @ St @ shift


def surrogate_mu_var(g: GramMatrix, strat: Stratification) -> float:
    """Exact Var of the stratified mean-embedding estimate, E|mu_hat - mu|^2 in feature space."""
    return weighted_cost(g, strat) / strat.n**2


def uniform_mu_var(g: GramMatrix, k: int) -> float:
    """Exact Var of the mean embedding of k points drawn without replacement."""
    K = g.values
    n = K.shape[0]
    pop_var = max(np.trace(K) / n - K.sum() / n**2, 0.0)
    if n == 1:
        return 0.0
    return pop_var / k * (n - k) / (n - 1)


@dataclass(frozen=True)
class StratumScalarModel:
    """Independent Gaussian scalars, one per stratum, with stratum sizes."""

    means: np.ndarray
    vars: np.ndarray
    sizes: np.ndarray

    def __post_init__(self):
        means = np.atleast_1d(np.asarray(self.means, dtype=float))
        vars_ = np.atleast_1d(np.asarray(self.vars, dtype=float))
        sizes = np.atleast_1d(np.asarray(self.sizes, dtype=float))
        if not means.shape == vars_.shape == sizes.shape:
            raise ValueError("means, vars and sizes must have equal length")
        if np.any(vars_ < 0):
            raise ValueError("stratum variances must be non-negative")
        if np.any(sizes < 1):
            raise ValueError("stratum sizes must be >= 1")
        if sizes.sum() < 2:
            raise ValueError("bias correction needs at least two points in total")
        for name, val in (("means", means), ("vars", vars_), ("sizes", sizes)):
            object.__setattr__(self, name, val)

    @property
    def k(self) -> int:
        return self.sizes.size

    @property
    def n(self) -> float:
        return float(self.sizes.sum())

    @property
    def weights(self) -> np.ndarray:
        return self.sizes / self.n

    @property
    def gamma(self) -> float:
        return self.n / (self.n - 1.0)

    def centering(self) -> np.ndarray:
        """Weighted centering matrix I - J A."""
        return np.eye(self.k) - np.outer(np.ones(self.k), self.weights)


def _mean_term(model: StratumScalarModel) -> float:
    A = np.diag(model.weights)
    AC = A @ model.centering()
    S = np.diag(model.vars)
    mu = model.means
    return float(mu @ AC @ S @ AC @ mu)


def var_weighted_cov(model: StratumScalarModel, trace_coef: float = 2.0) -> float:
    """Var of the bias-corrected stratified variance estimate.

    ``gamma^2 * (trace_coef * tr((A C S)^2) + 4 mu^T A C S A C mu)``. The
    estimate is a Gaussian quadratic form with matrix ``A C``, so the exact
    trace coefficient is 2; ``trace_coef=1`` reproduces a variant that
    disagrees with simulation and is kept only for comparison.
    """
    AC = np.diag(model.weights) @ model.centering()
    ACS = AC @ np.diag(model.vars)
    return float(model.gamma**2 * (trace_coef * np.trace(ACS @ ACS) + 4.0 * _mean_term(model)))


def var_known_mean_cov(model: StratumScalarModel) -> float:
    """Var of the stratified variance estimate taken about the known population mean."""
    AS = model.weights * model.vars
    return float(2.0 * np.sum(AS**2) + 4.0 * _mean_term(model))


def var_weighted_cov_from_known_mean(model: StratumScalarModel) -> float:
    """Bias-corrected variance expressed through :func:`var_known_mean_cov`.

    ``gamma^2 * (V' + 2 tr(A^2 S)^2 - 4 tr(A^3 S^2))``.
    """
    a, s = model.weights, model.vars
    return float(model.gamma**2 * (var_known_mean_cov(model)
                                   + 2.0 * np.sum(a**2 * s) ** 2
                                   - 4.0 * np.sum(a**3 * s**2)))


def stirling2(n: int, k: int) -> int:
    """Number of ways to split ``n`` labelled items into ``k`` non-empty unlabelled blocks."""
    if n < 0 or k < 0:
        raise ValueError("n and k must be non-negative")
    if k > n:
        return 0
    return _stirling2(n, k)


@lru_cache(maxsize=None)
def _stirling2(n, k):
    # Iterative row build; recursion depth would be n.
    row = [1] + [0] * k
    for m in range(1, n + 1):
        for j in range(min(m, k), 0, -1):
            row[j] = j * row[j] + row[j - 1]
        row[0] = 0
    return row[k]


def enumerate_partitions(n: int, k: int):
    """Yield every partition of ``range(n)`` into exactly ``k`` blocks as a label tuple.

    Labels form a restricted growth string, so each unlabelled partition
    appears exactly once.
    """
    labels = [0] * n

    def rec(i, used):
        if i == n:
            if used == k:
                yield tuple(labels)
            return
        if k - used > n - i:
            return
        for lab in range(min(used + 1, k)):
            labels[i] = lab
            yield from rec(i + 1, max(used, lab + 1))

    if 1 <= k <= n:
        yield from rec(0, 0)


@dataclass(frozen=True)
class RankErrorInputs:
    growth_bound: float
    partition_count: int
    spearman: float

    def __post_init__(self):
        if self.partition_count < 1:
            raise ValueError("partition_count must be >= 1")
        if not -1.0 <= self.spearman <= 1.0:
            raise ValueError(f"spearman must lie in [-1, 1], got {self.spearman}")
        if self.growth_bound < 0:
            raise ValueError("growth_bound must be non-negative")


def worst_case_error(inputs: RankErrorInputs) -> float:
    """Largest excess target value from minimising a surrogate with rank correlation rho."""
    p, rho = inputs.partition_count, inputs.spearman
    return inputs.growth_bound * math.sqrt(p * (p * p - 1) * (1.0 - rho) / 6.0)


def expected_error(inputs: RankErrorInputs) -> float:
    """Excess target value when every rank displacement has the same magnitude."""
    p, rho = inputs.partition_count, inputs.spearman
    return inputs.growth_bound * math.sqrt((p * p - 1) * (1.0 - rho) / 6.0)


def spearman_rho(xs, ys) -> float:
    """Spearman rank correlation with average ranks for ties."""
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    if xs.size != ys.size:
        raise ValueError(f"length mismatch: {xs.size} vs {ys.size}")
    if xs.size < 2:
        raise ValueError("need at least two observations")
    rx = rankdata(xs) - (xs.size + 1) / 2.0
    ry = rankdata(ys) - (ys.size + 1) / 2.0
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0.0:
        raise ValueError("rank correlation undefined for constant input")
    return float(np.clip(rx @ ry / denom, -1.0, 1.0))


@dataclass(frozen=True)
class RankErrorSummary:
    partitions: int
    spearman: float
    surrogate_rank: int
    observed_error: float
    growth_bound: float
    worst_case: float
    expected: float

    @property
    def within_bound(self) -> bool:
        return self.observed_error <= self.worst_case * (1 + 1e-12) + 1e-15


def rank_error_summary(target, surrogate) -> RankErrorSummary:
    """Compare minimising ``surrogate`` against minimising ``target`` over the same candidates.

    ``surrogate_rank`` is the 1-based position, in ascending target order, of
    the surrogate's minimiser (ties on the surrogate go to the best target).
    The growth bound is the largest gap between consecutive sorted targets.
    """
    f = np.asarray(target, dtype=float).ravel()
    g = np.asarray(surrogate, dtype=float).ravel()
    p = f.size
    order = np.lexsort((np.arange(p), f))
    f_sorted = f[order]
    rank_of = np.empty(p, dtype=int)
    rank_of[order] = np.arange(1, p + 1)
    g_min = np.flatnonzero(g == g.min())
    best = g_min[np.argmin(rank_of[g_min])]
    l = int(rank_of[best])
    K = float(np.diff(f_sorted).max()) if p > 1 else 0.0
    rho = spearman_rho(f, g) if p > 1 else 1.0
    inputs = RankErrorInputs(K, p, rho)
    return RankErrorSummary(
        partitions=p,
        spearman=rho,
        surrogate_rank=l,
        observed_error=float(f_sorted[l - 1] - f_sorted[0]),
        growth_bound=K,
        worst_case=worst_case_error(inputs),
        expected=expected_error(inputs),
    )


@dataclass(frozen=True)
class VarianceReport:
    target_var: float
    surrogate_var: float
    spearman: float = float("nan")
    worst_case_bound: float = float("nan")
    expected_error: float = float("nan")

    def __post_init__(self):
        if self.target_var < 0 or self.surrogate_var < 0:
            raise ValueError("variances must be non-negative")


MC_CHUNK = 8192


def _chunk_moments(sampler, seed, index, size):
    rng = child_rng(seed, index)
    x = np.asarray(sampler(rng, size), dtype=float).reshape(size, -1)
    mean = x.mean(axis=0)
    m2 = ((x - mean) ** 2).sum(axis=0)
    return size, mean, m2


def mc_variance(sampler: Callable[[np.random.Generator, int], np.ndarray], trials: int,
                seed: int = 0, workers: int | None = None) -> float:
    """Unbiased Monte Carlo variance of a randomised estimator.

    ``sampler(rng, size)`` returns ``size`` independent draws, shaped
    ``(size,)`` for scalars or ``(size, ...)`` for arrays; array-valued
    estimators report total variance (sum over entries). Draws are produced in
    fixed-size chunks, chunk ``c`` seeded from ``(seed, c)``, and chunk
    moments are merged in chunk order, so the result does not depend on
    ``workers``.
    """
    if trials < 2:
        raise ValueError("need at least two trials")
    sizes = [min(MC_CHUNK, trials - s) for s in range(0, trials, MC_CHUNK)]
    jobs = list(enumerate(sizes))
    if workers and workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda job: _chunk_moments(sampler, seed, *job), jobs))
    else:
        parts = [_chunk_moments(sampler, seed, i, s) for i, s in jobs]
    count, mean, m2 = parts[0]
    for nb, mb, m2b in parts[1:]:
        delta = mb - mean
        tot = count + nb
        mean = mean + delta * nb / tot
        m2 = m2 + m2b + delta**2 * count * nb / tot
        count = tot
    return float((m2 / (count - 1)).sum())
