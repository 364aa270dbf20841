"""The 13 derived wind predictors computed from raw NWP components.

All functions accept scalars or numpy arrays and broadcast elementwise.
Angles are degrees in (-180, 180].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Fixed column order of the feature matrix.
FEATURE_NAMES = (
    "ws10", "ws100", "wd10", "wd100", "we10", "we100",
    "wsh", "wed", "wdd", "u10", "v10", "u100", "v100",
)


@dataclass(frozen=True)
class FeatureConfig:
    """``d`` is the energy density scalar; the reference setting is d=1."""

    d: float = 1.0

    def __post_init__(self):
        if self.d <= 0:
            raise ValueError("energy density d must be positive")


def wind_speed(u, v):
    return np.hypot(u, v)


def wrap_angle(deg):
    """Wrap degrees into (-180, 180]."""
    wrapped = np.mod(np.asarray(deg, dtype=float) + 180.0, 360.0) - 180.0
    return np.where(wrapped == -180.0, 180.0, wrapped)[()]


def wind_direction(u, v):
    """Two-argument arctangent with u as the first argument, in degrees.

    The convention is isolated here so it can be swapped wholesale; (0, 0)
    maps to 0 degrees.
    """
    return wrap_angle(np.degrees(np.arctan2(u, v)))


def wind_energy(ws, d: float = 1.0):
    return 0.5 * d * np.asarray(ws, dtype=float) ** 3


def wind_shear(ws10, ws100):
    # Root-sum-of-squares of the two speeds, as printed in the source material.
    return np.hypot(ws10, ws100)


def feature_vector(u10, v10, u100, v100, config: FeatureConfig | None = None):
    """All 13 features, in ``FEATURE_NAMES`` order, for broadcastable inputs."""
    config = config or FeatureConfig()
    ws10 = wind_speed(u10, v10)
    ws100 = wind_speed(u100, v100)
    wd10 = wind_direction(u10, v10)
    wd100 = wind_direction(u100, v100)
    we10 = wind_energy(ws10, config.d)
    we100 = wind_energy(ws100, config.d)
    wsh = wind_shear(ws10, ws100)
    wed = we100 - we10
    wdd = wrap_angle(wd100 - wd10)
    return (ws10, ws100, wd10, wd100, we10, we100, wsh, wed, wdd,
            np.asarray(u10, dtype=float), np.asarray(v10, dtype=float),
            np.asarray(u100, dtype=float), np.asarray(v100, dtype=float))


def build_features(records, config: FeatureConfig | None = None) -> np.ndarray:
    """Feature matrix (n x 13); row i corresponds to records[i]."""
    records = list(records)
    if not records:
        raise ValueError("no records to build features from")
    u10 = np.array([r.u10 for r in records], dtype=float)
    v10 = np.array([r.v10 for r in records], dtype=float)
    u100 = np.array([r.u100 for r in records], dtype=float)
    v100 = np.array([r.v100 for r in records], dtype=float)
    cols = feature_vector(u10, v10, u100, v100, config)
    return np.column_stack([np.broadcast_to(c, u10.shape) for c in cols])
