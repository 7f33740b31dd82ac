"""Stratified minibatch sampling for low-variance MMD and CORAL estimates."""
from .kernels import (
    CoralPoly,
    EmbeddingSet,
    GramMatrix,
    KernelSpec,
    Linear,
    RbfMixture,
    centroid_sq_distance,
    eval_kernel,
    gram,
    read_embeddings_csv,
)
from .partition import (
    CapacityError,
    GreedyConfig,
    Stratification,
    brute_force_assign,
    distance_update,
    greedy_assign,
    kernel_kmeans,
    kmeanspp_seed,
    linear_kmeans,
    lloyd_weighted,
    nearest_assign,
    weighted_cost,
)
from .sampler import (
    ResampleSchedule,
    StratifiedBatch,
    StratifiedSampler,
    draw_stratified,
    estimate_coral,
    estimate_mean_embedding,
    estimate_mmd,
    schedule_should_recluster,
    uniform_batch,
)
from .variance import (
    GaussianSpec,
    RankErrorInputs,
    StratumScalarModel,
    VarianceReport,
    expected_error,
    mc_variance,
    spearman_rho,
    stirling2,
    surrogate_mu_var,
    var_known_mean_cov,
    var_mmd_hat,
    var_weighted_cov,
    worst_case_error,
)

__version__ = "0.1.0"
