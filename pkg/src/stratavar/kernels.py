"""Kernels, Gram matrices and kernel-trick centroid distances."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

# Kernel-trick distances can land slightly below zero through cancellation.
NEG_CLAMP_TOL = 1e-9


@dataclass(frozen=True)
class EmbeddingSet:
    """An (n, d) matrix of feature vectors with stable point identifiers."""

    data: np.ndarray
    ids: tuple = ()

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"embeddings must be a non-empty (n, d) matrix, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            bad = np.argwhere(~np.isfinite(data))[0]
            raise ValueError(f"non-finite embedding value at row {bad[0]}, column {bad[1]}")
        ids = tuple(self.ids) if len(self.ids) else tuple(range(data.shape[0]))
        if len(ids) != data.shape[0]:
            raise ValueError(f"got {len(ids)} ids for {data.shape[0]} points")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def __len__(self):
        return self.n


@dataclass(frozen=True)
class RbfMixture:
    """Sum of Gaussian kernels, k(z, z') = sum_g exp(-g * |z - z'|^2)."""

    gammas: tuple = (0.001, 0.01, 0.1, 1.0, 10.0)

    def __post_init__(self):
        gammas = tuple(float(g) for g in np.atleast_1d(self.gammas))
        if not gammas:
            raise ValueError("RbfMixture needs at least one gamma")
        if any(not np.isfinite(g) or g <= 0 for g in gammas):
            raise ValueError(f"gammas must be positive and finite, got {gammas}")
        object.__setattr__(self, "gammas", gammas)

    def pairwise(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        sq = _sq_dists(X, Y)
        out = np.zeros_like(sq)
        for g in self.gammas:
            out += np.exp(-g * sq)
        return out


@dataclass(frozen=True)
class CoralPoly:
    """Squared centred inner product, k(z, z') = ((z - c)^T (z' - c))^2.

    Its explicit feature map is the flattened outer product (z - c)(z - c)^T.
    """

    center: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).ravel()
        if center.size < 1 or not np.all(np.isfinite(center)):
            raise ValueError("CoralPoly center must be a finite, non-empty vector")
        center.setflags(write=False)
        object.__setattr__(self, "center", center)

    @classmethod
    def from_points(cls, points: EmbeddingSet) -> "CoralPoly":
        """Centre on the full-data mean."""
        return cls(points.data.mean(axis=0))

    def pairwise(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        if X.shape[1] != self.center.size:
            raise ValueError(
                f"CoralPoly center has dimension {self.center.size}, data has {X.shape[1]}"
            )
        return ((X - self.center) @ (Y - self.center).T) ** 2

    def feature_map(self, X: np.ndarray) -> np.ndarray:
        Xc = np.atleast_2d(X) - self.center
        return np.einsum("ni,nj->nij", Xc, Xc).reshape(Xc.shape[0], -1)


@dataclass(frozen=True)
class Linear:
    """Plain inner product."""

    def pairwise(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return X @ Y.T

    def feature_map(self, X: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=float))


KernelSpec = Union[RbfMixture, CoralPoly, Linear]


def _sq_dists(X, Y):
    sq = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * X @ Y.T
    np.maximum(sq, 0.0, out=sq)
    return sq


def _as_matrix(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return z.reshape(1, -1) if z.ndim <= 1 else z


def eval_kernel(spec: KernelSpec, z, z_prime) -> float:
    a, b = _as_matrix(z), _as_matrix(z_prime)
    if a.shape != b.shape or a.shape[0] != 1:
        raise ValueError(f"kernel arguments must be vectors of equal length, got {a.shape} and {b.shape}")
    return float(spec.pairwise(a, b)[0, 0])


@dataclass(frozen=True)
class GramMatrix:
    values: np.ndarray
    kernel: KernelSpec
    ids: tuple = field(default=())

    @property
    def n(self) -> int:
        return self.values.shape[0]


def gram(points: EmbeddingSet, spec: KernelSpec) -> GramMatrix:
    """Dense n x n kernel matrix over ``points``."""
    if not isinstance(points, EmbeddingSet):
        points = EmbeddingSet(points)
    X = points.data
    K = spec.pairwise(X, X)
    # Pairwise evaluation is symmetric only up to rounding of the squared distances.
    K = 0.5 * (K + K.T)
    if isinstance(spec, RbfMixture):
        np.fill_diagonal(K, float(len(spec.gammas)))
    K.setflags(write=False)
    return GramMatrix(K, spec, points.ids)


def _values(g) -> np.ndarray:
    return g.values if isinstance(g, GramMatrix) else np.asarray(g, dtype=float)


def centroid_sq_distance(g: GramMatrix, member_indices: Sequence[int], x: int) -> float:
    """Squared feature-space distance from point ``x`` to the mean of ``member_indices``."""
    K = _values(g)
    S = np.asarray(member_indices, dtype=int).ravel()
    if S.size == 0:
        raise ValueError("centroid of an empty index set is undefined")
    n = K.shape[0]
    if S.min() < 0 or S.max() >= n or not 0 <= x < n:
        raise ValueError(f"index out of range for {n} points")
    dist = K[x, x] - 2.0 * K[x, S].mean() + K[np.ix_(S, S)].mean()
    if dist < -NEG_CLAMP_TOL:
        raise ArithmeticError(f"negative squared distance {dist}; kernel is not PSD")
    return max(dist, 0.0)


def read_embeddings_csv(path, header: bool = False) -> EmbeddingSet:
    """Load one point per row, comma-separated numeric columns.

    Errors carry 1-based row and column numbers of the offending cell.
    """
    path = Path(path)
    rows = []
    width = None
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ValueError(f"{path}: row {lineno} has {len(row)} columns, expected {width}")
            vals = []
            for col, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise ValueError(f"{path}: row {lineno}, column {col}: cannot parse {cell!r}") from None
                if not np.isfinite(v):
                    raise ValueError(f"{path}: row {lineno}, column {col}: non-finite value {cell!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return EmbeddingSet(np.array(rows))
