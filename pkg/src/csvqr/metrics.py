"""Pinball loss, quantile score, and prediction-interval reliability metrics.

Quantile levels are fractions in (0, 1) everywhere in this package; coverage
figures (PINC, PICP, ACE) are percentages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def pinball(u, tau: float):
    """Asymmetric absolute loss: tau*u if u >= 0 else (tau-1)*u.

    ``u`` may be a scalar or array; the result is nonnegative and zero only
    at u = 0.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0,1), got {tau}")
    u = np.asarray(u, dtype=float)
    return np.where(u >= 0, tau * u, (tau - 1.0) * u)[()]


def quantile_score(q_hat, y, tau: float):
    """Pinball loss of the forecast residual y - q_hat at level tau."""
    return pinball(np.asarray(y, dtype=float) - np.asarray(q_hat, dtype=float), tau)


def picp(intervals, y, strict: bool = True) -> float:
    """Percent of observations inside their closed interval [lower, upper].

    A step whose lower bound exceeds its upper bound raises by default.
    With ``strict=False`` such a step simply covers nothing (the closed
    interval is empty); the backtest uses this mode because unconstrained
    query points may produce crossed quantile pairs that are reported as a
    diagnostic rather than repaired.
    """
    intervals = np.asarray(intervals, dtype=float)
    y = np.asarray(y, dtype=float)
    if intervals.ndim != 2 or intervals.shape[1] != 2:
        raise ValueError("intervals must be an (n, 2) array of [lower, upper]")
    if intervals.shape[0] != y.shape[0]:
        raise ValueError("intervals and observations differ in length")
    lower, upper = intervals[:, 0], intervals[:, 1]
    if strict and np.any(lower > upper):
        raise ValueError("crossed interval: lower bound exceeds upper bound")
    inside = (y >= lower) & (y <= upper)
    return float(100.0 * inside.mean())


def ace(picp_percent: float, beta: float) -> float:
    """|PICP - PINC| where PINC = 100 (1 - beta)."""
    if not 0.0 <= picp_percent <= 100.0:
        raise ValueError(f"picp must be in [0,100], got {picp_percent}")
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must be in (0,1), got {beta}")
    return abs(picp_percent - 100.0 * (1.0 - beta))


@dataclass(frozen=True)
class ReliabilityResult:
    """Nominal vs empirical coverage, all in percent."""

    pinc: float
    picp: float
    ace: float

    def __post_init__(self):
        if not 0.0 <= self.picp <= 100.0:
            raise ValueError("picp out of [0,100]")
        if abs(self.ace - abs(self.picp - self.pinc)) > 1e-9:
            raise ValueError("ace must equal |picp - pinc|")


def reliability(intervals, y, beta: float, strict: bool = True) -> ReliabilityResult:
    cov = picp(intervals, y, strict=strict)
    return ReliabilityResult(pinc=100.0 * (1.0 - beta), picp=cov, ace=ace(cov, beta))


def qscore_cells(quantile_matrix, y, levels) -> np.ndarray:
    """Per-(step, level) pinball scores for an (n, M) forecast matrix."""
    Q = np.asarray(quantile_matrix, dtype=float)
    y = np.asarray(y, dtype=float)
    taus = np.asarray(list(levels), dtype=float)
    if Q.ndim != 2 or Q.shape != (y.shape[0], taus.shape[0]):
        raise ValueError(
            f"shape mismatch: quantiles {Q.shape}, observations {y.shape}, "
            f"levels {taus.shape}")
    u = y[:, None] - Q
    return np.where(u >= 0, taus[None, :] * u, (taus[None, :] - 1.0) * u)


def aggregate_qscore(quantile_matrix, y, levels) -> tuple[float, float]:
    """Mean and population SD of pinball scores over all (step, level) cells."""
    cells = qscore_cells(quantile_matrix, y, levels)
    return float(cells.mean()), float(cells.std())
