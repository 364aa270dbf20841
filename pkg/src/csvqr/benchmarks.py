"""Reference probabilistic forecasters: persistence, climatology, uniform.

Each forecaster returns an (horizon x M) matrix whose rows repeat one
unconditional quantile set, so outputs never cross by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CoverageError

PERSISTENCE = "persistence"
CLIMATOLOGY = "climatology"
UNIFORM = "uniform"


@dataclass(frozen=True)
class BenchmarkKind:
    kind: str
    window_hours: int = 12

    def __post_init__(self):
        if self.kind not in (PERSISTENCE, CLIMATOLOGY, UNIFORM):
            raise ValueError(f"unknown benchmark {self.kind!r}")
        if self.window_hours < 1:
            raise ValueError("window_hours must be >= 1")

    def forecast(self, history, horizon: int, levels) -> np.ndarray:
        if self.kind == PERSISTENCE:
            return persistence_forecast(history, horizon, levels, self.window_hours)
        if self.kind == CLIMATOLOGY:
            return climatology_forecast(history, horizon, levels)
        return uniform_forecast(horizon, levels)


def empirical_quantiles(sample, levels) -> np.ndarray:
    """Sample quantiles with linear interpolation at position tau*(n-1)+1.

    This is numpy's default interpolation rule; it is the single convention
    used for every unconditional benchmark in this package.
    """
    sample = np.asarray(sample, dtype=float)
    if sample.size == 0:
        raise CoverageError("empty sample for empirical quantiles")
    taus = np.asarray(list(levels), dtype=float)
    return np.quantile(sample, taus)


def persistence_forecast(history, horizon: int, levels, window_hours: int = 12) -> np.ndarray:
    """Repeat the empirical quantiles of the last ``window_hours`` observations."""
    history = np.asarray(history, dtype=float)
    if history.shape[0] < window_hours:
        raise CoverageError(
            f"persistence needs {window_hours} observations, got {history.shape[0]}")
    row = empirical_quantiles(history[-window_hours:], levels)
    return np.tile(row, (horizon, 1))


def climatology_forecast(history, horizon: int, levels) -> np.ndarray:
    """Repeat the empirical quantiles of the full observed history."""
    history = np.asarray(history, dtype=float)
    if history.size == 0:
        raise CoverageError("climatology needs a nonempty history")
    row = empirical_quantiles(history, levels)
    return np.tile(row, (horizon, 1))


def uniform_forecast(horizon: int, levels) -> np.ndarray:
    """Quantiles of U(0,1) on normalized power: level tau forecasts exactly tau."""
    taus = np.asarray(list(levels), dtype=float)
    return np.tile(taus, (horizon, 1))
