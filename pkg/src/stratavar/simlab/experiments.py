"""Simulation studies: objective rank correlations, assignment heuristics,
sampler ablation, and exhaustive rank-error checks."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .._rng import child_rng, sub_seed
from ..kernels import EmbeddingSet, RbfMixture, gram, read_embeddings_csv
from ..partition import (
    CapacityError,
    GreedyConfig,
    Stratification,
    greedy_trial_costs,
    kernel_kmeans,
    linear_kmeans,
    lloyd_weighted,
    nearest_assign,
    weighted_cost,
    within_ss,
    brute_force_assign,
)
from ..sampler import draw_stratified_many
from ..variance import (
    GaussianSpec,
    StratumScalarModel,
    enumerate_partitions,
    mc_variance,
    rank_error_summary,
    spearman_rho,
    stirling2,
    surrogate_mu_var,
    uniform_mu_var,
    var_known_mean_cov,
    var_mmd_hat,
    var_weighted_cov,
    var_weighted_cov_from_known_mean,
)
from .config import ExperimentConfig, worker_count
from .data import log_uniform, random_psd, synthetic_embeddings
from .table import ResultTable

log = logging.getLogger(__name__)

RANKBOUND_LIMIT = 10**4
REDUCED_SHAPES = ((10, 2), (10, 3), (12, 2))


def _map(fn, items):
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def _table(cfg: ExperimentConfig, columns, keys) -> ResultTable:
    return ResultTable(cfg.experiment, tuple(columns), tuple(keys),
                       metadata={"experiment": cfg.experiment, "seed": cfg.seed,
                                 "config_hash": cfg.config_hash()})


def load_embeddings(cfg: ExperimentConfig, d: int, stream: int = 0) -> EmbeddingSet:
    if cfg.input_path:
        return read_embeddings_csv(cfg.input_path, header=cfg.header)
    return synthetic_embeddings(cfg.n, d=d, seed=sub_seed(cfg.seed, stream))


# --- mean-embedding target vs surrogate ------------------------------------

def run_fig1(cfg: ExperimentConfig) -> ResultTable:
    """Rank correlation between Var(MMD estimate) and Var(mean embedding) over random covariances.

    Source covariances are ``s * G G^T`` with ``s`` log-uniform over
    ``cfg.scale_decades``; the mean shift is the all-ones vector. Rows with
    ``exploratory=true`` add a fixed random target covariance.
    """
    table = _table(cfg, ("d", "target_cov", "samples", "spearman", "exploratory"),
                   ("target_cov", "d"))
    cells = [(d, False) for d in cfg.dims]
    if 2 in cfg.dims:
        cells.append((2, True))

    def cell(spec):
        d, with_target = spec
        rng = child_rng(cfg.seed, 2 * d + int(with_target))
        shift = np.ones(d)
        St = random_psd(rng, d) if with_target else np.zeros((d, d))
        gt = GaussianSpec(np.zeros(d), St)
        target, surrogate = [], []
        for _ in range(cfg.samples):
            Ss = random_psd(rng, d, log_uniform(rng, cfg.scale_decades))
            target.append(var_mmd_hat(GaussianSpec(shift, Ss), gt))
            surrogate.append(float(np.trace(Ss)))
        return spearman_rho(target, surrogate)

    for (d, with_target), rho in zip(cells, _map(cell, cells)):
        table.add(d=d, target_cov="random" if with_target else "zero", samples=cfg.samples,
                  spearman=rho, exploratory=with_target)
    return table


# --- covariance target vs surrogate -----------------------------------------

def stratum_sizes(n: int, k: int) -> np.ndarray:
    """Sizes proportional to 1..k summing to n (largest-remainder rounding, each >= 1)."""
    raw = n * np.arange(1, k + 1) / (k * (k + 1) / 2)
    sizes = np.maximum(np.floor(raw).astype(int), 1)
    short = n - sizes.sum()
    order = np.argsort(-(raw - np.floor(raw)), kind="stable")
    for i in range(abs(short)):
        sizes[order[i % k]] += 1 if short > 0 else -1
    if sizes.min() < 1 or sizes.sum() != n:
        raise ValueError(f"cannot split n={n} into {k} strata proportional to 1..k")
    return sizes


def _random_stratum_model(rng, k: int, d: int, dist: str):
    """Per-stratum means and covariances; lognormal parameters live in log space."""
    if dist == "normal":
        mu_scale, cov_scale = log_uniform(rng, 2.0), log_uniform(rng, 2.0)
    else:
        mu_scale, cov_scale = 0.5 * log_uniform(rng, 1.0), 0.1 * log_uniform(rng, 1.0)
    means = rng.normal(0.0, np.sqrt(mu_scale), (k, d))
    covs = np.stack([random_psd(rng, d, cov_scale / d) for _ in range(k)])
    return means, covs


def _cov_estimators(means, covs, sizes, dist: str):
    """Samplers for the bias-corrected and the known-mean stratified covariance."""
    k, d = means.shape
    a = sizes / sizes.sum()
    n = float(sizes.sum())
    chol = np.linalg.cholesky(covs + 1e-12 * np.eye(d))
    if dist == "normal":
        pop_mean = a @ means
    else:
        pop_mean = a @ np.exp(means + 0.5 * np.einsum("hii->hi", covs))

    def draw(rng, size):
        eps = rng.standard_normal((size, k, d))
        Z = means + np.einsum("hij,thj->thi", chol, eps)
        return np.exp(Z) if dist == "lognormal" else Z

    def corrected(rng, size):
        Z = draw(rng, size)
        Zc = Z - np.einsum("h,thi->ti", a, Z)[:, None, :]
        return n / (n - 1.0) * np.einsum("h,thi,thj->tij", a, Zc, Zc)

    def known_mean(rng, size):
        Zc = draw(rng, size) - pop_mean
        return np.einsum("h,thi,thj->tij", a, Zc, Zc)

    return corrected, known_mean


def run_fig2(cfg: ExperimentConfig) -> ResultTable:
    """Rank correlation between Var(corrected covariance) and Var(known-mean covariance).

    Scalar normal strata use the closed forms; every other cell uses Monte
    Carlo with ``cfg.trials`` draws per model and common random numbers for
    the two estimators.
    """
    table = _table(cfg, ("distribution", "d", "models", "method", "spearman", "max_identity_residual"),
                   ("distribution", "d"))
    dists = ("normal", "lognormal") if cfg.distribution == "both" else (cfg.distribution,)
    sizes = stratum_sizes(cfg.n, cfg.k)
    cells = [(dist, d) for dist in dists for d in cfg.dims]

    def cell(spec):
        dist, d = spec
        rng = child_rng(cfg.seed, 1000 * dists.index(dist) + d)
        closed = dist == "normal" and d == 1
        target, surrogate, resid = [], [], 0.0
        for m in range(cfg.samples):
            means, covs = _random_stratum_model(rng, cfg.k, d, dist)
            if closed:
                model = StratumScalarModel(means[:, 0], covs[:, 0, 0], sizes)
                t = var_weighted_cov(model)
                target.append(t)
                surrogate.append(var_known_mean_cov(model))
                resid = max(resid, abs(t - var_weighted_cov_from_known_mean(model)) / max(t, 1e-300))
            else:
                corrected, known = _cov_estimators(means, covs, sizes, dist)
                mc_seed = sub_seed(cfg.seed, 10**6 * (1 + dists.index(dist)) + 1000 * d + m)
                target.append(mc_variance(corrected, cfg.trials, mc_seed))
                surrogate.append(mc_variance(known, cfg.trials, mc_seed))
        return ("closed_form" if closed else "monte_carlo", spearman_rho(target, surrogate),
                resid if closed else float("nan"))

    for (dist, d), (method, rho, resid) in zip(cells, _map(cell, cells)):
        table.add(distribution=dist, d=d, models=cfg.samples, method=method, spearman=rho,
                  max_identity_residual=resid)
    return table


# --- assignment heuristic ----------------------------------------------------

def assignment_instance(seed: int, n: int, k: int, d: int = 16) -> np.ndarray:
    """Squared distances from ``n`` synthetic embeddings to ``k`` other random embeddings."""
    pts = synthetic_embeddings(n + k, d=d, seed=seed).data
    X, C = pts[:n], pts[n:]
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def trial_sweep(max_trials: int) -> list:
    sweep, t = [], 1
    while t < max_trials:
        sweep.append(t)
        t *= 10
    return sweep + [max_trials]


def run_fig3(cfg: ExperimentConfig) -> ResultTable:
    """Greedy assignment quality.

    Table ``a``: best greedy trial vs nearest-centroid assignment on
    ``(n, k)`` instances. Table ``a_reduced``: exhaustive optimum vs the
    cheapest greedy trial on instances small enough to enumerate. Table
    ``b``: median best cost over the first T trials. Table ``c``: parallel
    block size at a fixed 100-trial budget, plus best cost at a budget of
    ``100 * block`` trials (equal number of sequential assignment steps).
    """
    table = _table(cfg, ("table", "param", "instance", "metric", "value"),
                   ("table", "param", "instance", "metric"))
    inst_seeds = [sub_seed(cfg.seed, i) for i in range(cfg.samples)]
    sweep = trial_sweep(cfg.greedy_trials)

    def instance(i):
        D = assignment_instance(inst_seeds[i], cfg.n, cfg.k)
        gcfg = GreedyConfig(cfg.greedy_trials, cfg.greedy_block, inst_seeds[i])
        costs = greedy_trial_costs(D, gcfg)
        prefix = np.minimum.accumulate(costs)
        nearest = weighted_cost(D, nearest_assign(D))
        blocks = []
        for b in range(1, 21):
            c100 = greedy_trial_costs(D, GreedyConfig(100, b, inst_seeds[i]))
            c_steps = greedy_trial_costs(D, GreedyConfig(100 * b, b, inst_seeds[i]))
            blocks.append((b, float(c100.min()), float(c100.mean()), float(c_steps.min())))
        return float(costs.min()), nearest, [float(prefix[t - 1]) for t in sweep], blocks

    results = _map(instance, range(cfg.samples))
    for i, (best, nearest, prefix, blocks) in enumerate(results):
        table.add(table="a", param=cfg.greedy_trials, instance=i, metric="greedy_best", value=best)
        table.add(table="a", param=cfg.greedy_trials, instance=i, metric="nearest_centroid", value=nearest)
        table.add(table="a", param=cfg.greedy_trials, instance=i, metric="greedy_below_nearest",
                  value=float(best < nearest))
        for t, v in zip(sweep, prefix):
            table.add(table="b", param=t, instance=i, metric="best_cost", value=v)
        for b, best100, mean100, best_steps in blocks:
            table.add(table="c", param=b, instance=i, metric="best_fixed_trials", value=best100)
            table.add(table="c", param=b, instance=i, metric="mean_fixed_trials", value=mean100)
            table.add(table="c", param=b, instance=i, metric="best_fixed_steps", value=best_steps)
    for j, t in enumerate(sweep):
        table.add(table="b", param=t, instance="median", metric="best_cost",
                  value=float(np.median([r[2][j] for r in results])))
    for j in range(20):
        for m, metric in enumerate(("best_fixed_trials", "mean_fixed_trials", "best_fixed_steps")):
            table.add(table="c", param=j + 1, instance="median", metric=metric,
                      value=float(np.median([r[3][j][m + 1] for r in results])))

    def reduced(spec):
        idx, (n, k) = spec
        seed = sub_seed(cfg.seed, 10**6 + idx)
        D = assignment_instance(seed, n, k)
        brute = weighted_cost(D, brute_force_assign(D))
        costs = greedy_trial_costs(D, GreedyConfig(1000, 1, seed))
        return n, k, brute, float(costs.min()), float(costs.max())

    specs = [(i, shape) for i, shape in enumerate(REDUCED_SHAPES * max(1, cfg.samples // len(REDUCED_SHAPES)))]
    for idx, (n, k, brute, lo, hi) in zip(range(len(specs)), _map(reduced, specs)):
        label = f"{n}x{k}"
        table.add(table="a_reduced", param=label, instance=idx, metric="brute_force", value=brute)
        table.add(table="a_reduced", param=label, instance=idx, metric="greedy_min_trial", value=lo)
        table.add(table="a_reduced", param=label, instance=idx, metric="greedy_max_trial", value=hi)
        table.add(table="a_reduced", param=label, instance=idx, metric="brute_le_all_trials",
                  value=float(brute <= lo))
    return table


# --- sampler ablation --------------------------------------------------------

def kernel_kmeans_cost(g, strat: Stratification) -> float:
    """Unweighted kernel k-means objective."""
    K = g.values
    total = float(np.trace(K))
    for h in range(strat.k):
        S = strat.members(h)
        if S.size:
            total -= K[np.ix_(S, S)].sum() / S.size
    return total


def ablation_strata(points: EmbeddingSet, g, k: int, cfg: ExperimentConfig) -> dict:
    """Best-of-``cfg.restarts`` stratification per clusterer, each judged by its own objective."""
    seeds = [sub_seed(cfg.seed, 7919 * k + r) for r in range(cfg.restarts)]
    X = points.data
    lin = min((linear_kmeans(points, k, seed=s) for s in seeds), key=lambda st: within_ss(X, st))
    ker = min((kernel_kmeans(g, k, seed=s)[0] for s in seeds), key=lambda st: kernel_kmeans_cost(g, st))
    wtd = min((lloyd_weighted(g, k, GreedyConfig(cfg.greedy_trials, cfg.greedy_block, s))[0] for s in seeds),
              key=lambda st: weighted_cost(g, st))
    return {"linear_kmeans": lin, "kernel_kmeans": ker, "weighted": wtd}


def embedding_sq_errors(K: np.ndarray, idx: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """|mu_hat - mu|^2 in feature space for each row of an index array."""
    col_means = K.mean(axis=1)
    Kbb = K[idx[:, :, None], idx[:, None, :]]
    quad = np.einsum("tij,i,j->t", Kbb, weights, weights)
    return np.maximum(quad - 2.0 * col_means[idx] @ weights + K.mean(), 0.0)


def mc_embedding_variance(K, draw, weights, trials: int, seed: int, chunk: int = 2000):
    """Monte Carlo Var(mu_hat) = E|mu_hat - mu|^2 and its standard error."""
    vals = []
    for c, start in enumerate(range(0, trials, chunk)):
        rng = child_rng(seed, c)
        vals.append(embedding_sq_errors(K, draw(rng, min(chunk, trials - start)), weights))
    vals = np.concatenate(vals)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(vals.size))


def run_fig4(cfg: ExperimentConfig) -> ResultTable:
    """Var(mean embedding) under uniform sampling and three stratifications, unit-bandwidth RBF."""
    table = _table(cfg, ("k", "sampler", "mc_var", "mc_se", "exact_var", "uniform_ratio"),
                   ("k", "sampler"))
    points = load_embeddings(cfg, cfg.dims[0])
    g = gram(points, RbfMixture((1.0,)))
    K = g.values
    n = points.n

    def cell(k):
        strata = ablation_strata(points, g, k, cfg)
        mc_seed = sub_seed(cfg.seed, 31337 + k)

        def uniform_draw(rng, size):
            return np.argpartition(rng.random((size, n)), k - 1, axis=1)[:, :k] if k < n \
                else np.tile(np.arange(n), (size, 1))

        out = {"uniform": (*mc_embedding_variance(K, uniform_draw, np.full(k, 1.0 / k), cfg.trials, mc_seed),
                           uniform_mu_var(g, k))}
        for name, st in strata.items():
            w = st.sizes / n
            draw = (lambda s: lambda rng, size: draw_stratified_many(s, rng, size))(st)
            out[name] = (*mc_embedding_variance(K, draw, w, cfg.trials, mc_seed), surrogate_mu_var(g, st))
        return out

    ks = [k for k in cfg.ks if k <= n]
    for k, out in zip(ks, _map(cell, ks)):
        u = out["uniform"][0]
        for name, (mc, se, exact) in out.items():
            table.add(k=k, sampler=name, mc_var=mc, mc_se=se, exact_var=exact,
                      uniform_ratio=u / mc if mc > 0 else float("inf") if u > 0 else 1.0)
    return table


# --- exhaustive rank-error check -----------------------------------------------

def mean_embedding_cov(X: np.ndarray, labels) -> np.ndarray:
    """Covariance of the stratified mean estimate, (1/n^2) sum_h |S_h|^2 Cov(S_h)."""
    labels = np.asarray(labels)
    n, d = X.shape
    S = np.zeros((d, d))
    for h in np.unique(labels):
        pts = X[labels == h]
        c = pts - pts.mean(axis=0)
        S += len(pts) * (c.T @ c)
    return S / n**2


def rankbound_instance(X: np.ndarray, k: int, shift=None, target_cov=None):
    """Exact target (MMD-estimate variance) and surrogate (mean-embedding variance) per partition."""
    n, d = X.shape
    shift = np.ones(d) if shift is None else np.asarray(shift, dtype=float)
    St = np.zeros((d, d)) if target_cov is None else np.asarray(target_cov, dtype=float)
    gt = GaussianSpec(np.zeros(d), St)
    target, surrogate, parts = [], [], []
    for labels in enumerate_partitions(n, k):
        Ss = mean_embedding_cov(X, labels)
        target.append(var_mmd_hat(GaussianSpec(shift, Ss), gt))
        surrogate.append(float(np.trace(Ss)))
        parts.append(labels)
    return np.array(target), np.array(surrogate), parts


def run_rankbound(cfg: ExperimentConfig) -> ResultTable:
    """Exhaustive comparison of the surrogate minimiser with the target ranking, per random instance."""
    p = stirling2(cfg.n, cfg.k)
    if p > RANKBOUND_LIMIT or p == 0:
        raise CapacityError(f"Stirling({cfg.n}, {cfg.k}) = {p} partitions is outside 1..{RANKBOUND_LIMIT}")
    table = _table(cfg, ("d", "instance", "partitions", "spearman", "surrogate_rank", "observed_error",
                         "growth_bound", "worst_case_bound", "expected_error", "within_bound"),
                   ("d", "instance"))
    cells = [(d, i) for d in cfg.dims for i in range(cfg.samples)]

    def cell(spec):
        d, i = spec
        rng = child_rng(cfg.seed, 1000 * d + i)
        X = rng.standard_normal((cfg.n, d))
        f, g, parts = rankbound_instance(X, cfg.k)
        if len(parts) != p:
            raise RuntimeError(f"enumerated {len(parts)} partitions, expected {p}")
        return rank_error_summary(f, g)

    for (d, i), s in zip(cells, _map(cell, cells)):
        table.add(d=d, instance=i, partitions=s.partitions, spearman=s.spearman,
                  surrogate_rank=s.surrogate_rank, observed_error=s.observed_error,
                  growth_bound=s.growth_bound, worst_case_bound=s.worst_case,
                  expected_error=s.expected, within_bound=s.within_bound)
    return table


RUNNERS = {
    "fig1": run_fig1,
    "fig2": run_fig2,
    "fig3": run_fig3,
    "fig4": run_fig4,
    "rankbound": run_rankbound,
}


def run(cfg: ExperimentConfig) -> ResultTable:
    log.info("running %s (config %s)", cfg.experiment, cfg.config_hash())
    return RUNNERS[cfg.experiment](cfg)
