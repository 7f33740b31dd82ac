"""Synthetic embeddings and random covariance models."""
from __future__ import annotations

import numpy as np

from ..kernels import EmbeddingSet


def synthetic_embeddings(n: int, d: int = 16, components: int = 10, seed: int = 0,
                         spread: float = 3.0, normalize: bool = True) -> EmbeddingSet:
    """Mixture of isotropic unit-variance Gaussians with centres drawn from N(0, spread^2 I).

    With ``normalize`` the points are divided by ``sqrt(2 d (1 + spread^2))``,
    the root mean squared distance between two independent draws, so that
    unit-bandwidth RBF kernels neither saturate nor flatten.
    """
    rng = np.random.default_rng(seed)
    centres = rng.normal(0.0, spread, (components, d))
    labels = rng.integers(components, size=n)
    X = centres[labels] + rng.normal(0.0, 1.0, (n, d))
    if normalize:
        X /= np.sqrt(2.0 * d * (1.0 + spread**2))
    return EmbeddingSet(X)


def random_psd(rng: np.random.Generator, d: int, scale: float = 1.0) -> np.ndarray:
    """``scale * G G^T`` with standard normal ``G`` of shape (d, d)."""
    G = rng.standard_normal((d, d))
    return scale * (G @ G.T)


def log_uniform(rng: np.random.Generator, decades: float) -> float:
    """Random factor spread evenly in log10 over ``decades`` centred on 1."""
    return float(10.0 ** rng.uniform(-decades / 2.0, decades / 2.0))
