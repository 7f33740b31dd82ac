"""Counter-based seed splitting shared by the randomized routines."""
import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x):
    """SplitMix64 finalizer; works on Python ints and uint64 arrays."""
    if isinstance(x, np.ndarray):
        z = x.astype(np.uint64, copy=True)
        with np.errstate(over="ignore"):
            z += np.uint64(0x9E3779B97F4A7C15)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))
    z = (int(x) + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def sub_seed(seed: int, index: int) -> int:
    """Seed for stream ``index`` derived from a master ``seed``."""
    return splitmix64((int(seed) + int(index)) & _MASK)


def child_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(sub_seed(seed, index))


def trial_permutations(seed: int, first_trial: int, count: int, n: int) -> np.ndarray:
    """Row orders for trials ``first_trial .. first_trial + count - 1``.

    Trial ``t`` sorts the keys ``splitmix64(sub_seed(seed, t) + i)``, so each
    permutation depends only on ``(seed, t)`` and not on batching or order.
    """
    trials = np.arange(first_trial, first_trial + count, dtype=np.uint64)
    with np.errstate(over="ignore"):
        bases = splitmix64(trials + np.uint64(int(seed) & _MASK))
        keys = splitmix64(bases[:, None] + np.arange(n, dtype=np.uint64)[None, :])
    return np.argsort(keys, axis=1, kind="stable")
