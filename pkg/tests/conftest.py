import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def two_blobs(rng, n_per=20, sep=20.0):
    a = rng.normal(0.0, 1.0, (n_per, 2))
    b = rng.normal(0.0, 1.0, (n_per, 2)) + [sep, 0.0]
    return np.vstack([a, b]), np.repeat([0, 1], n_per)
