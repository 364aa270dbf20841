"""Built-in heteroscedastic test process with closed-form conditional quantiles.

Targets follow y = clip(0.5 + 0.4 * x1 * eps, 0, 1) with eps standard normal
and features uniform on [0,1]^dim, so the conditional tau-quantile is the
clipped Gaussian quantile 0.5 + 0.4 * x1 * z_tau. Only the first feature
carries signal; the rest are distractors.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import norm

INTERCEPT = 0.5
SLOPE = 0.4
DEFAULT_DIM = 2


def sample(n: int, dim: int = DEFAULT_DIM, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Draw (X, y) from the process; X is (n, dim), y is clipped to [0,1]."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(rng)
    X = rng.uniform(size=(n, dim))
    eps = rng.standard_normal(n)
    y = np.clip(INTERCEPT + SLOPE * X[:, 0] * eps, 0.0, 1.0)
    return X, y


def true_quantiles(X, levels) -> np.ndarray:
    """Analytic conditional quantiles, clipped like the targets."""
    X = np.asarray(X, dtype=float)
    z = norm.ppf(np.asarray(list(levels), dtype=float))
    q = INTERCEPT + SLOPE * X[:, 0][:, None] * z[None, :]
    return np.clip(q, 0.0, 1.0)
