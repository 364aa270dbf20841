"""Kernel evaluation and Gram-matrix construction.

Only the RBF kernel exp(-||x - x'||^2 / (2 sigma^2)) and the linear kernel
(plain dot product) are provided. Gram matrices are dense; at the scale this
package targets (a few thousand training hours) the full matrix fits in
memory comfortably.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

RBF = "rbf"
LINEAR = "linear"


@dataclass(frozen=True)
class KernelSpec:
    kind: str = RBF
    sigma: float | None = None

    def __post_init__(self):
        if self.kind not in (RBF, LINEAR):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == RBF:
            if self.sigma is None or self.sigma <= 0:
                raise ValueError("RBF kernel requires sigma > 0")


def kernel(spec: KernelSpec, x, xp) -> float:
    """Single kernel evaluation; raises on dimension mismatch."""
    x = np.asarray(x, dtype=float).ravel()
    xp = np.asarray(xp, dtype=float).ravel()
    if x.shape != xp.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {xp.shape}")
    if spec.kind == LINEAR:
        return float(x @ xp)
    d2 = float(((x - xp) ** 2).sum())
    return float(np.exp(-d2 / (2.0 * spec.sigma**2)))


def gram(spec: KernelSpec, X) -> np.ndarray:
    """Dense n x n Gram matrix, exactly symmetric; RBF has unit diagonal."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("gram requires a nonempty 2-D matrix")
    if spec.kind == LINEAR:
        K = X @ X.T
        return (K + K.T) / 2.0
    # cdist evaluates (i,j) and (j,i) with identical arithmetic, so the
    # squared-distance matrix is exactly symmetric with an exact-zero diagonal.
    d2 = cdist(X, X, "sqeuclidean")
    return np.exp(-d2 / (2.0 * spec.sigma**2))


def gram_cross(spec: KernelSpec, X_train, X_query) -> np.ndarray:
    """m x n matrix of K(query_i, train_j); rows align with query rows."""
    X_train = np.asarray(X_train, dtype=float)
    X_query = np.asarray(X_query, dtype=float)
    if X_train.ndim != 2 or X_query.ndim != 2 or X_train.size == 0 or X_query.size == 0:
        raise ValueError("gram_cross requires nonempty 2-D matrices")
    if X_train.shape[1] != X_query.shape[1]:
        raise ValueError(
            f"dimension mismatch: train has {X_train.shape[1]} columns, "
            f"query has {X_query.shape[1]}")
    if spec.kind == LINEAR:
        return X_query @ X_train.T
    d2 = cdist(X_query, X_train, "sqeuclidean")
    return np.exp(-d2 / (2.0 * spec.sigma**2))


def median_heuristic_sigma(X) -> float:
    """Median pairwise distance; a data-driven alternative to sigma = sqrt(p)."""
    X = np.asarray(X, dtype=float)
    d = cdist(X, X, "euclidean")
    upper = d[np.triu_indices_from(d, k=1)]
    med = float(np.median(upper)) if upper.size else 1.0
    return med if med > 0 else 1.0
