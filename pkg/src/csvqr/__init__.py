"""Constrained kernel multi-quantile regression and wind-power forecasting.

The library fits M conditional quantile curves jointly, with constraints
that keep them from crossing at every training point, and wraps the
estimator in a full probabilistic-forecasting pipeline: data ingestion,
wind feature engineering, benchmark forecasters, sliding-window
backtesting, and reliability/quantile-score evaluation.
"""

__version__ = "0.1.0"

from .backtest import (BacktestConfig, BacktestReport, export_report,
                       run_backtest, run_synthetic, summarize_report,
                       tune_hyperparameters)
from .benchmarks import (BenchmarkKind, climatology_forecast, empirical_quantiles,
                         persistence_forecast, uniform_forecast)
from .dataset import (CsvSchema, MinMaxScaler, SlidingWindowSplit, TimeSeriesRecord,
                      apply_minmax, fit_minmax_scaler, load_csv, make_windows,
                      write_csv)
from .errors import (BacktestError, CoverageError, CsvqrError, IntegrityError,
                     ParseError, ValidationError)
from .features import (FEATURE_NAMES, FeatureConfig, build_features, wind_direction,
                       wind_energy, wind_shear, wind_speed)
from .kernels import KernelSpec, gram, gram_cross, kernel, median_heuristic_sigma
from .metrics import (ReliabilityResult, ace, aggregate_qscore, picp, pinball,
                      quantile_score, reliability)
from .model import (CsvqrConfig, CsvqrModel, DualSolution, QuantileLevels,
                    crossing_count, dual_gradient, dual_objective, kkt_violation,
                    load_model, predict, predict_intervals, primal_objective,
                    save_model, solve)

__all__ = [name for name in dir() if not name.startswith("_")]
