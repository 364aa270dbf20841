"""Sliding-window backtesting: fit, forecast, evaluate, and export reports.

Each test month is forecast from a model trained on the three preceding
calendar months (or from an unconditional benchmark distribution) and scored
with interval reliability (PICP/ACE at PINC 80/60/40/20 percent) and the
quantile score. Nothing consumed during fitting, scaling, or tuning may carry
a timestamp at or past the first test hour; the report records the latest
timestamp each month's training actually touched so tests can audit this.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime
from itertools import product
from math import sqrt
from pathlib import Path

import numpy as np

from . import synthetic
from .benchmarks import CLIMATOLOGY, PERSISTENCE, UNIFORM, BenchmarkKind
from .dataset import drop_missing_power, fit_minmax_scaler, apply_minmax, make_windows
from .errors import BacktestError, CoverageError
from .features import build_features
from .kernels import RBF, KernelSpec
from .metrics import aggregate_qscore, qscore_cells, reliability
from .model import (CsvqrConfig, CsvqrModel, QuantileLevels, crossing_count,
                    predict, predict_intervals, solve)

logger = logging.getLogger(__name__)

CSVQR = "csvqr"
METHODS = (CSVQR, CLIMATOLOGY, PERSISTENCE, UNIFORM)

DEFAULT_PI_PAIRS = ((0.1, 0.9), (0.2, 0.8), (0.3, 0.7), (0.4, 0.6))
DEFAULT_GRID_C = (0.1, 1.0, 10.0, 100.0)
DEFAULT_GRID_SIGMA_FACTORS = (0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class BacktestConfig:
    levels: QuantileLevels = field(default_factory=QuantileLevels.deciles)
    grid_C: tuple[float, ...] = DEFAULT_GRID_C
    grid_sigma: tuple[float, ...] | None = None  # None: (0.5,1,2,4) * sqrt(n_features)
    pi_pairs: tuple[tuple[float, float], ...] = DEFAULT_PI_PAIRS
    tol: float | None = None
    max_iter: int = 200
    clamp: bool = True
    thin: int = 1
    persistence_window: int = 12
    holdout_fraction: float = 0.2
    jobs: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.thin < 1:
            raise ValueError("thin factor must be >= 1")
        if not self.grid_C:
            raise ValueError("grid_C must not be empty")
        if self.grid_sigma is not None and not self.grid_sigma:
            raise ValueError("grid_sigma must not be empty")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    def sigma_grid(self, n_features: int) -> tuple[float, ...]:
        if self.grid_sigma is not None:
            return self.grid_sigma
        return tuple(f * sqrt(n_features) for f in DEFAULT_GRID_SIGMA_FACTORS)


@dataclass(frozen=True)
class ReliabilityRow:
    month: str
    method: str
    pinc: float
    picp: float
    ace: float


@dataclass(frozen=True)
class QScoreRow:
    month: str
    method: str
    mean: float
    sd: float
    query_crossings: int | None = None


@dataclass(frozen=True)
class ForecastSet:
    """Raw forecasts for one (month, method); enough to recompute every cell."""

    month: str
    method: str
    timestamps: tuple
    observed: np.ndarray  # NaN where the target was absent
    quantiles: np.ndarray  # (n, M)
    train_crossings: int | None = None
    query_crossings: int | None = None
    chosen_C: float | None = None
    chosen_sigma: float | None = None
    converged: bool | None = None


@dataclass(frozen=True)
class AuditEntry:
    month: str
    train_start: datetime | None
    test_start: datetime | None
    max_train_timestamp: datetime | None


@dataclass(frozen=True)
class BacktestReport:
    levels: QuantileLevels
    pi_pairs: tuple[tuple[float, float], ...]
    methods: tuple[str, ...]
    months: tuple[str, ...]
    reliability: tuple[ReliabilityRow, ...]
    qscore: tuple[QScoreRow, ...]
    forecasts: tuple[ForecastSet, ...]
    audit: dict
    fan_method: str

    def forecast_set(self, month: str, method: str) -> ForecastSet:
        for fs in self.forecasts:
            if fs.month == month and fs.method == method:
                return fs
        raise KeyError((month, method))


def _normalize_methods(methods) -> tuple[str, ...]:
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
    if not methods:
        raise ValueError("at least one method is required")
    return methods


def _grid_cells(config: BacktestConfig, n_features: int) -> list[tuple[float, float]]:
    cells = sorted(product(config.grid_C, config.sigma_grid(n_features)))
    return [(float(c), float(s)) for c, s in cells]


def _holdout_pinball(args) -> float:
    """Worker for one tuning cell; top level so process pools can pickle it."""
    X_fit, y_fit, X_hold, y_hold, levels_tuple, C, sigma_, tol, max_iter, clamp = args
    levels = QuantileLevels(levels_tuple)
    cfg = CsvqrConfig(C=C, kernel=KernelSpec(RBF, sigma_), tol=tol, max_iter=max_iter)
    import warnings as _warnings
    with _warnings.catch_warnings():
        _warnings.simplefilter("ignore", RuntimeWarning)
        model = solve(X_fit, y_fit, levels, cfg)
    Q = predict(model, X_hold, clamp=clamp)
    return float(qscore_cells(Q, y_hold, levels).mean())


def tune_hyperparameters(X, y, grid, levels: QuantileLevels,
                         tol: float | None = None, max_iter: int = 200,
                         clamp: bool = True, holdout_fraction: float = 0.2,
                         jobs: int = 1) -> tuple[float, float]:
    """Pick the (C, sigma) cell minimizing mean pinball on a chronological tail.

    The last ``holdout_fraction`` of rows is held out; the scaler is refit on
    the head only, so no holdout value leaks into scaling. Cells are visited
    sorted ascending, and only a strictly better score replaces the incumbent,
    which breaks ties toward smaller C and then smaller sigma.
    """
    grid = [(float(c), float(s)) for c, s in grid]
    if not grid:
        raise ValueError("hyperparameter grid is empty")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    n_hold = int(round(n * holdout_fraction))
    if n_hold < 1 or n - n_hold < 1:
        raise CoverageError(
            f"training window of {n} rows is too small to hold out "
            f"{holdout_fraction:.0%} for tuning")
    X_head, X_tail = X[:n - n_hold], X[n - n_hold:]
    y_head, y_tail = y[:n - n_hold], y[n - n_hold:]
    scaler = fit_minmax_scaler(X_head)
    X_fit = apply_minmax(scaler, X_head)
    X_hold = apply_minmax(scaler, X_tail)

    cells = sorted(grid)
    tasks = [(X_fit, y_head, X_hold, y_tail, tuple(levels), C, s, tol, max_iter, clamp)
             for C, s in cells]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(_holdout_pinball, tasks))
    else:
        scores = [_holdout_pinball(t) for t in tasks]

    best_idx = 0
    for i in range(1, len(scores)):
        if scores[i] < scores[best_idx]:
            best_idx = i
    for (C, s), score in zip(cells, scores):
        logger.debug("tuning cell C=%g sigma=%g -> holdout pinball %.6f", C, s, score)
    return cells[best_idx]


def fit_csvqr_window(X_train_raw, y_train, levels: QuantileLevels,
                     config: BacktestConfig) -> CsvqrModel:
    """Tune (when the grid has several cells), then fit on the whole window."""
    X_train_raw = np.asarray(X_train_raw, dtype=float)
    cells = _grid_cells(config, X_train_raw.shape[1])
    if len(cells) > 1:
        C, sigma_ = tune_hyperparameters(
            X_train_raw, y_train, cells, levels, tol=config.tol,
            max_iter=config.max_iter, clamp=config.clamp,
            holdout_fraction=config.holdout_fraction, jobs=config.jobs)
    else:
        C, sigma_ = cells[0]
    scaler = fit_minmax_scaler(X_train_raw)
    X_scaled = apply_minmax(scaler, X_train_raw)
    cfg = CsvqrConfig(C=C, kernel=KernelSpec(RBF, sigma_), tol=config.tol,
                      max_iter=config.max_iter)
    return solve(X_scaled, y_train, levels, cfg, scaler=scaler)


def _evaluate(month: str, method: str, timestamps, observed, Q,
              levels: QuantileLevels, pi_pairs, extra: dict):
    """Reliability and Q-score rows for one forecast set, on observed steps."""
    observed = np.asarray(observed, dtype=float)
    mask = np.isfinite(observed)
    rows = []
    y_obs = observed[mask]
    Q_obs = Q[mask]
    intervals = predict_intervals(Q_obs, levels, pi_pairs)
    for lo, hi in pi_pairs:
        beta = round(1.0 - (hi - lo), 12)  # keep PINC free of float dust
        # non-strict: a crossed query-point pair covers nothing; crossings are
        # reported as a diagnostic, never repaired
        rel = reliability(intervals[(lo, hi)], y_obs, beta, strict=False)
        rows.append(ReliabilityRow(month, method, rel.pinc, rel.picp, rel.ace))
    mean, sd = aggregate_qscore(Q_obs, y_obs, levels)
    qrow = QScoreRow(month, method, mean, sd, extra.get("query_crossings"))
    fs = ForecastSet(month=month, method=method, timestamps=tuple(timestamps),
                     observed=observed, quantiles=Q, **extra)
    return rows, qrow, fs


def run_backtest(records, methods, first_test_month, last_test_month,
                 config: BacktestConfig | None = None) -> BacktestReport:
    """Sliding-window evaluation over single-zone records.

    For every test month, CSVQR is tuned and fit on the three preceding
    months while benchmarks form their unconditional distributions from
    observations strictly before the test month; all methods then forecast
    every hour of the test month and are scored on the hours with observed
    power.
    """
    config = config or BacktestConfig()
    methods = _normalize_methods(methods)
    levels = config.levels
    splits = make_windows(records, first_test_month, last_test_month)

    reliability_rows: list[ReliabilityRow] = []
    qscore_rows: list[QScoreRow] = []
    forecast_sets: list[ForecastSet] = []
    audit = {}
    months = []

    for split in splits:
        month = split.test_month
        months.append(month)
        train_recs = [r for r in records if split.train_start <= r.timestamp < split.train_end]
        test_recs = [r for r in records if split.test_start <= r.timestamp < split.test_end]
        train_obs = drop_missing_power(train_recs, context=f"training window for {month}")
        if config.thin > 1:
            train_obs = train_obs[::config.thin]
        if not train_obs:
            raise CoverageError(f"no observed power in the training window for {month}")
        past_obs = [r for r in records if r.timestamp < split.test_start and r.has_power]

        y_train = np.array([r.power for r in train_obs], dtype=float)
        X_train_raw = build_features(train_obs)
        X_test_raw = build_features(test_recs)
        observed = np.array([r.power if r.has_power else np.nan for r in test_recs],
                            dtype=float)
        timestamps = [r.timestamp for r in test_recs]
        history = np.array([r.power for r in past_obs], dtype=float)
        n_test = len(test_recs)

        audit[month] = AuditEntry(
            month=month, train_start=split.train_start, test_start=split.test_start,
            max_train_timestamp=max(r.timestamp for r in train_obs + past_obs))

        for method in methods:
            try:
                extra: dict = {}
                if method == CSVQR:
                    model = fit_csvqr_window(X_train_raw, y_train, levels, config)
                    Q = predict(model, X_test_raw, clamp=config.clamp)
                    fitted = predict(model, X_train_raw, clamp=False)
                    extra = {
                        "train_crossings": crossing_count(fitted),
                        "query_crossings": crossing_count(predict(model, X_test_raw, clamp=False)),
                        "chosen_C": model.config.C,
                        "chosen_sigma": model.config.kernel.sigma,
                        "converged": model.converged,
                    }
                else:
                    kind = BenchmarkKind(method, config.persistence_window)
                    Q = kind.forecast(history, n_test, levels.as_array())
                rows, qrow, fs = _evaluate(month, method, timestamps, observed, Q,
                                           levels, config.pi_pairs, extra)
            except Exception as exc:  # annotate with month/method context
                raise BacktestError(month, method, exc) from exc
            reliability_rows.extend(rows)
            qscore_rows.append(qrow)
            forecast_sets.append(fs)

    qscore_rows.extend(_overall_rows(forecast_sets, methods, levels))
    fan_method = CSVQR if CSVQR in methods else methods[0]
    return BacktestReport(levels=levels, pi_pairs=config.pi_pairs, methods=methods,
                          months=tuple(months), reliability=tuple(reliability_rows),
                          qscore=tuple(qscore_rows), forecasts=tuple(forecast_sets),
                          audit=audit, fan_method=fan_method)


def _overall_rows(forecast_sets, methods, levels) -> list[QScoreRow]:
    """The "All" Q-score rows aggregate the union of per-month cell sets."""
    rows = []
    for method in methods:
        cells = []
        crossings = 0
        has_crossings = False
        for fs in forecast_sets:
            if fs.method != method:
                continue
            mask = np.isfinite(fs.observed)
            cells.append(qscore_cells(fs.quantiles[mask], fs.observed[mask], levels).ravel())
            if fs.query_crossings is not None:
                has_crossings = True
                crossings += fs.query_crossings
        if not cells:
            continue
        alls = np.concatenate(cells)
        rows.append(QScoreRow("All", method, float(alls.mean()), float(alls.std()),
                              crossings if has_crossings else None))
    return rows


def run_synthetic(methods, config: BacktestConfig | None = None,
                  n_train: int = 400, n_test: int = 2000,
                  dim: int = synthetic.DEFAULT_DIM) -> BacktestReport:
    """Backtest on the built-in heteroscedastic process, one pseudo-month.

    Steps stand in for timestamps; persistence and climatology draw their
    histories from the training targets.
    """
    config = config or BacktestConfig()
    methods = _normalize_methods(methods)
    levels = config.levels
    rng = np.random.default_rng(config.seed)
    X_train, y_train = synthetic.sample(n_train, dim=dim, rng=rng)
    X_test, y_test = synthetic.sample(n_test, dim=dim, rng=rng)
    month = "synthetic"

    reliability_rows: list[ReliabilityRow] = []
    qscore_rows: list[QScoreRow] = []
    forecast_sets: list[ForecastSet] = []
    for method in methods:
        try:
            extra: dict = {}
            if method == CSVQR:
                model = fit_csvqr_window(X_train, y_train, levels, config)
                Q = predict(model, X_test, clamp=config.clamp)
                extra = {
                    "train_crossings": crossing_count(predict(model, X_train, clamp=False)),
                    "query_crossings": crossing_count(predict(model, X_test, clamp=False)),
                    "chosen_C": model.config.C,
                    "chosen_sigma": model.config.kernel.sigma,
                    "converged": model.converged,
                }
            else:
                kind = BenchmarkKind(method, config.persistence_window)
                Q = kind.forecast(y_train, n_test, levels.as_array())
            rows, qrow, fs = _evaluate(month, method, range(n_test), y_test, Q,
                                       levels, config.pi_pairs, extra)
        except Exception as exc:
            raise BacktestError(month, method, exc) from exc
        reliability_rows.extend(rows)
        qscore_rows.append(qrow)
        forecast_sets.append(fs)

    qscore_rows.extend(_overall_rows(forecast_sets, methods, levels))
    fan_method = CSVQR if CSVQR in methods else methods[0]
    return BacktestReport(levels=levels, pi_pairs=config.pi_pairs, methods=methods,
                          months=(month,), reliability=tuple(reliability_rows),
                          qscore=tuple(qscore_rows), forecasts=tuple(forecast_sets),
                          audit={month: AuditEntry(month, None, None, None)},
                          fan_method=fan_method)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if np.isnan(value):
            return ""
        return repr(value)
    if isinstance(value, datetime):
        return value.strftime("%Y-%m-%d %H:%M")
    return str(value)


def export_report(report: BacktestReport, out_dir) -> list[Path]:
    """Write reliability.csv, qscore.csv, and one fan-chart CSV per month.

    Output is deterministic byte-for-byte for a fixed report: rows keep
    report order and floats are printed with shortest round-trip repr.
    The fan chart carries the ``report.fan_method`` forecasts.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "reliability.csv"
    lines = ["month,method,pinc,picp,ace"]
    for row in report.reliability:
        lines.append(",".join([row.month, row.method, _fmt(row.pinc),
                               _fmt(row.picp), _fmt(row.ace)]))
    path.write_text("\n".join(lines) + "\n")
    written.append(path)

    path = out / "qscore.csv"
    lines = ["month,method,qscore_mean,qscore_sd,query_crossings"]
    for row in report.qscore:
        lines.append(",".join([row.month, row.method, _fmt(row.mean), _fmt(row.sd),
                               _fmt(row.query_crossings)]))
    path.write_text("\n".join(lines) + "\n")
    written.append(path)

    level_names = [f"q{t:g}" for t in report.levels]
    for month in report.months:
        fs = report.forecast_set(month, report.fan_method)
        path = out / f"fanchart_{month}.csv"
        lines = ["timestamp,observed," + ",".join(level_names)]
        for i, ts in enumerate(fs.timestamps):
            obs = fs.observed[i]
            cells = [_fmt(ts), "" if np.isnan(obs) else repr(float(obs))]
            cells.extend(repr(float(v)) for v in fs.quantiles[i])
            lines.append(",".join(cells))
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    return written


def summarize_report(report: BacktestReport) -> str:
    """One-screen text summary: per-month ACE at each PINC plus Q-score."""
    pincs = [100.0 * (hi - lo) for lo, hi in report.pi_pairs]
    header = ["month", "method"] + [f"ACE@{p:g}%" for p in pincs] + ["Q-score", "SD"]
    ace_by_key = {(r.month, r.method, round(r.pinc, 6)): r.ace for r in report.reliability}
    q_by_key = {(r.month, r.method): r for r in report.qscore}
    rows = [header]
    for month in list(report.months) + ["All"]:
        for method in report.methods:
            qrow = q_by_key.get((month, method))
            if qrow is None:
                continue
            cells = [month, method]
            for p in pincs:
                val = ace_by_key.get((month, method, round(p, 6)))
                cells.append("" if val is None else f"{val:.2f}")
            cells.append(f"{qrow.mean:.4f}")
            cells.append(f"{qrow.sd:.4f}")
            rows.append(cells)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
                     for r in rows)
