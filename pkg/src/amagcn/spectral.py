"""Laplacian preprocessing and the Chebyshev basis used by graph convolutions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class PopulationGraph:
    """Weighted population graph with node features, labels and split masks."""

    adjacency: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray = None
    n_classes: int | None = None

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.adjacency.shape[0]
        if self.adjacency.shape != (n, n):
            raise DataError(f"adjacency must be square, got {self.adjacency.shape}")
        if not np.array_equal(self.adjacency, self.adjacency.T):
            raise DataError("adjacency must be symmetric")
        if np.any(np.diag(self.adjacency) != 0):
            raise DataError("adjacency must have a zero diagonal")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DataError(
                f"feature matrix has {self.features.shape[0]} rows for {n} graph nodes"
            )
        if self.labels.shape != (n,):
            raise DataError("one label per node is required")
        self.train_mask = np.asarray(self.train_mask, dtype=bool)
        if self.val_mask is None:
            self.val_mask = ~self.train_mask
        self.val_mask = np.asarray(self.val_mask, dtype=bool)
        if np.any(self.train_mask & self.val_mask):
            raise DataError("train and validation masks overlap")
        if self.n_classes is None:
            self.n_classes = int(self.labels.max()) + 1

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    def one_hot(self) -> np.ndarray:
        return np.eye(self.n_classes)[self.labels]


@dataclass
class ChebBasis:
    terms: list[np.ndarray]

    @property
    def order(self) -> int:
        return len(self.terms) - 1

    @property
    def stacked(self) -> np.ndarray:
        """Terms as a ``(K+1, n, n)`` array (cached)."""
        if getattr(self, "_stacked", None) is None:
            self._stacked = np.stack(self.terms)
        return self._stacked


def normalized_laplacian(adjacency: np.ndarray) -> np.ndarray:
    """``I - D^{-1/2} A D^{-1/2}``; isolated nodes get an identity row."""
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataError("adjacency must be a square matrix")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12):
        raise DataError("adjacency must be symmetric")
    if np.any(a < 0):
        raise DataError("adjacency must be nonnegative")
    deg = a.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    return np.eye(len(a)) - inv_sqrt[:, None] * a * inv_sqrt[None, :]


def scaled_laplacian(laplacian: np.ndarray) -> np.ndarray:
    # lambda_max of a symmetric normalized Laplacian is bounded by 2
    return laplacian - np.eye(len(laplacian))


def chebyshev_basis(scaled: np.ndarray, order: int = 3) -> ChebBasis:
    """Chebyshev polynomials ``T_0..T_order`` of the scaled Laplacian."""
    if order < 0:
        raise ValueError(f"Chebyshev order must be nonnegative, got {order}")
    n = scaled.shape[0]
    terms = [np.eye(n)]
    if order >= 1:
        terms.append(np.array(scaled, dtype=np.float64))
    for _ in range(2, order + 1):
        terms.append(2.0 * scaled @ terms[-1] - terms[-2])
    return ChebBasis(terms)


def basis_from_adjacency(adjacency: np.ndarray, order: int = 3) -> ChebBasis:
    return chebyshev_basis(scaled_laplacian(normalized_laplacian(adjacency)), order)
