"""Command-line entry point wiring the modules together.

Subcommands: ingest, features, fit, predict, evaluate, backtest. A plain
``key=value`` config file may supply any flag via ``--config``; flags given
on the command line override the file. Exit codes: 0 success (possibly with
warning lines), 2 usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv as csv_module
import sys
import warnings
from datetime import datetime
from math import sqrt
from pathlib import Path

import numpy as np

from . import __version__
from .backtest import (CSVQR, METHODS, BacktestConfig, export_report,
                       run_backtest, run_synthetic, summarize_report)
from .benchmarks import BenchmarkKind
from .dataset import (CsvSchema, add_months, drop_missing_power, fit_minmax_scaler,
                      apply_minmax, load_csv, month_start, parse_month, write_csv)
from .errors import CoverageError, CsvqrError
from .features import FEATURE_NAMES, FeatureConfig, build_features
from .kernels import RBF, KernelSpec
from .metrics import aggregate_qscore, reliability
from .model import (CsvqrConfig, QuantileLevels, load_model, predict,
                    predict_intervals, save_model, solve)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3

DEFAULT_PI_PAIRS = ((0.1, 0.9), (0.2, 0.8), (0.3, 0.7), (0.4, 0.6))


def parse_levels(text: str) -> QuantileLevels:
    """Either ``start:stop:step`` or a comma-separated list of fractions."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"level range must be start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ValueError("level step must be positive")
        count = int(round((stop - start) / step)) + 1
        return QuantileLevels(tuple(round(start + k * step, 10) for k in range(count)))
    return QuantileLevels(tuple(float(p) for p in text.split(",")))


def parse_month_range(text: str) -> tuple[tuple[int, int], tuple[int, int]]:
    if ":" in text:
        first, last = text.split(":", 1)
        return parse_month(first), parse_month(last)
    single = parse_month(text)
    return single, single


def parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(","))


def load_config_args(path) -> list[str]:
    """Translate key=value lines into CLI tokens; '#' starts a comment."""
    tokens: list[str] = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CsvqrError(f"cannot read config file {path}: {exc}") from exc
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CsvqrError(f"{path}:{line_no}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        flag = "--" + key.replace("_", "-")
        if value.lower() in ("true", "yes", "on"):
            tokens.append(flag)
        elif value.lower() in ("false", "no", "off"):
            continue
        else:
            tokens.extend([flag, value])
    return tokens


def _schema_from_args(args) -> CsvSchema:
    return CsvSchema(timestamp=args.col_timestamp, zone=args.col_zone,
                     power=args.col_power, u10=args.col_u10, v10=args.col_v10,
                     u100=args.col_u100, v100=args.col_v100)


def _add_schema_flags(parser):
    parser.add_argument("--col-timestamp", default="TIMESTAMP")
    parser.add_argument("--col-zone", default="ZONEID")
    parser.add_argument("--col-power", default="TARGETVAR")
    parser.add_argument("--col-u10", default="U10")
    parser.add_argument("--col-v10", default="V10")
    parser.add_argument("--col-u100", default="U100")
    parser.add_argument("--col-v100", default="V100")


def _load_zone(args) -> list:
    records = load_csv(args.data, _schema_from_args(args))
    if getattr(args, "zone", None) is not None:
        records = [r for r in records if r.zone == args.zone]
        if not records:
            raise CoverageError(f"no records for zone {args.zone} in {args.data}")
    return records


def _records_in_months(records, first: tuple[int, int], last: tuple[int, int]):
    start = month_start(*first)
    end = month_start(*add_months(*last, 1))
    return [r for r in records if start <= r.timestamp < end]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csvqr",
        description="Non-crossing kernel quantile regression and the wind "
                    "probabilistic-forecasting pipeline around it.")
    parser.add_argument("--version", action="version", version=f"csvqr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a data file and write it back in canonical form")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--zone", type=int)
    _add_schema_flags(p)

    p = sub.add_parser("features", help="emit the 13-column feature matrix as CSV")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--zone", type=int)
    p.add_argument("--density", type=float, default=1.0,
                   help="energy density d (default 1)")
    _add_schema_flags(p)

    p = sub.add_parser("fit", help="fit a model on a month range and save it")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--train", required=True, metavar="YYYY-MM:YYYY-MM")
    p.add_argument("--out", required=True)
    p.add_argument("--zone", type=int, default=1)
    p.add_argument("--levels", type=parse_levels, default=QuantileLevels.deciles())
    p.add_argument("--C", dest="C", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=None,
                   help="RBF bandwidth (default sqrt(13))")
    p.add_argument("--kernel", choices=("rbf", "linear"), default="rbf")
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=200)
    _add_schema_flags(p)

    p = sub.add_parser("predict", help="forecast quantiles for a month range")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--range", dest="month_range", required=True, metavar="YYYY-MM[:YYYY-MM]")
    p.add_argument("--out", required=True)
    p.add_argument("--zone", type=int, default=1)
    p.add_argument("--model", help="model file from `csvqr fit`")
    p.add_argument("--benchmark", choices=("persistence", "climatology", "uniform"),
                   help="forecast with a benchmark instead of a fitted model")
    p.add_argument("--levels", type=parse_levels, default=QuantileLevels.deciles(),
                   help="levels for --benchmark (a model carries its own)")
    p.add_argument("--persistence-window", type=int, default=12)
    p.add_argument("--no-clamp", action="store_true")
    _add_schema_flags(p)

    p = sub.add_parser("evaluate", help="score a quantile forecast CSV against observations")
    p.add_argument("--config")
    p.add_argument("--forecast", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--zone", type=int, default=1)
    p.add_argument("--out", help="optional metrics CSV")
    _add_schema_flags(p)

    p = sub.add_parser("backtest", help="sliding-window evaluation with report export")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--synthetic", action="store_true",
                   help="run on the built-in heteroscedastic process instead of a file")
    p.add_argument("--out", required=True)
    p.add_argument("--zone", type=int, default=1)
    p.add_argument("--from", dest="first_month", metavar="YYYY-MM")
    p.add_argument("--to", dest="last_month", metavar="YYYY-MM")
    p.add_argument("--methods", default="csvqr,climatology,persistence,uniform")
    p.add_argument("--levels", type=parse_levels, default=QuantileLevels.deciles())
    p.add_argument("--grid-C", dest="grid_C", type=parse_float_list, default=None)
    p.add_argument("--grid-sigma", dest="grid_sigma", type=parse_float_list, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1,
                   help="worker processes for tuning-grid fan-out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--synthetic-train", type=int, default=400)
    p.add_argument("--synthetic-test", type=int, default=2000)
    p.add_argument("--synthetic-dim", type=int, default=2)
    _add_schema_flags(p)
    return parser


def cmd_ingest(args) -> int:
    records = _load_zone(args)
    write_csv(records, args.out, _schema_from_args(args))
    zones = sorted({r.zone for r in records})
    missing = sum(1 for r in records if not r.has_power)
    print(f"ingested {len(records)} rows, zones {zones}, {missing} rows without power")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_features(args) -> int:
    records = _load_zone(args)
    X = build_features(records, FeatureConfig(d=args.density))
    with open(args.out, "w", newline="") as fh:
        writer = csv_module.writer(fh)
        writer.writerow(FEATURE_NAMES)
        for row in X:
            writer.writerow([repr(float(v)) for v in row])
    print(f"wrote {X.shape[0]} x {X.shape[1]} feature matrix to {args.out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    records = _load_zone(args)
    first, last = parse_month_range(args.train)
    train = drop_missing_power(_records_in_months(records, first, last), "fit window")
    if not train:
        raise CoverageError(f"no observed power in {args.train} for zone {args.zone}")
    X_raw = build_features(train)
    y = np.array([r.power for r in train], dtype=float)
    scaler = fit_minmax_scaler(X_raw)
    sigma = args.sigma if args.sigma is not None else sqrt(X_raw.shape[1])
    kernel = KernelSpec(args.kernel, sigma if args.kernel == RBF else None)
    config = CsvqrConfig(C=args.C, kernel=kernel, tol=args.tol, max_iter=args.max_iter)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        model = solve(apply_minmax(scaler, X_raw), y, args.levels, config, scaler=scaler)
    save_model(model, args.out)
    print(f"fit {len(train)} rows, {len(args.levels)} levels, "
          f"C={config.C:g}, kernel={kernel.kind}"
          + (f", sigma={kernel.sigma:g}" if kernel.sigma else "")
          + f"; sweeps={model.n_sweeps}, kkt={model.kkt:.3g}")
    for w in caught:
        print(f"warning: {w.message}")
    print(f"wrote {args.out}")
    return EXIT_OK


def _write_forecast_csv(path, timestamps, Q, levels) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv_module.writer(fh)
        writer.writerow(["timestamp"] + [f"q{t:g}" for t in levels])
        for ts, row in zip(timestamps, Q):
            writer.writerow([ts.strftime("%Y-%m-%d %H:%M")]
                            + [repr(float(v)) for v in row])


def cmd_predict(args) -> int:
    if bool(args.model) == bool(args.benchmark):
        raise CsvqrError("predict needs exactly one of --model or --benchmark")
    records = _load_zone(args)
    first, last = parse_month_range(args.month_range)
    target = _records_in_months(records, first, last)
    if not target:
        raise CoverageError(f"no rows in {args.month_range} for zone {args.zone}")
    timestamps = [r.timestamp for r in target]

    if args.model:
        model = load_model(args.model)
        Q = predict(model, build_features(target), clamp=not args.no_clamp)
        levels = model.levels
        if not model.converged:
            print(f"warning: loaded model had not converged (kkt={model.kkt:.3g})")
    else:
        start = month_start(*first)
        history = np.array([r.power for r in records
                            if r.timestamp < start and r.has_power], dtype=float)
        kind = BenchmarkKind(args.benchmark, args.persistence_window)
        levels = args.levels
        Q = kind.forecast(history, len(target), levels.as_array())

    _write_forecast_csv(args.out, timestamps, Q, levels)
    print(f"wrote {len(target)} x {1 + len(levels)} forecast to {args.out}")
    return EXIT_OK


def _read_forecast_csv(path) -> tuple[list[datetime], np.ndarray, QuantileLevels]:
    with open(path, newline="") as fh:
        reader = csv_module.reader(fh)
        header = next(reader)
        if header[0] != "timestamp" or len(header) < 2:
            raise CsvqrError(f"{path}: not a forecast CSV (header {header[:3]}...)")
        levels = QuantileLevels(tuple(float(name[1:]) for name in header[1:]))
        timestamps, rows = [], []
        for row in reader:
            timestamps.append(datetime.strptime(row[0], "%Y-%m-%d %H:%M"))
            rows.append([float(v) for v in row[1:]])
    return timestamps, np.asarray(rows, dtype=float), levels


def cmd_evaluate(args) -> int:
    timestamps, Q, levels = _read_forecast_csv(args.forecast)
    records = _load_zone(args)
    observed = {r.timestamp: r.power for r in records if r.has_power}
    mask = [ts in observed for ts in timestamps]
    if not any(mask):
        raise CoverageError("no observations overlap the forecast timestamps")
    y = np.array([observed[ts] for ts, keep in zip(timestamps, mask) if keep])
    Qm = Q[np.asarray(mask)]
    mean, sd = aggregate_qscore(Qm, y, levels)
    print(f"evaluated {len(y)} steps at {len(levels)} levels")
    print(f"qscore_mean={mean!r} qscore_sd={sd!r}")
    out_rows = [("qscore_mean", mean), ("qscore_sd", sd)]
    for lo, hi in DEFAULT_PI_PAIRS:
        try:
            intervals = predict_intervals(Qm, levels, [(lo, hi)])[(lo, hi)]
        except ValueError:
            continue
        rel = reliability(intervals, y, 1.0 - (hi - lo))
        print(f"PINC={rel.pinc:g}% PICP={rel.picp:.2f} ACE={rel.ace:.2f}")
        out_rows.append((f"picp_{rel.pinc:g}", rel.picp))
        out_rows.append((f"ace_{rel.pinc:g}", rel.ace))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv_module.writer(fh)
            writer.writerow(["metric", "value"])
            for name, value in out_rows:
                writer.writerow([name, repr(float(value))])
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_backtest(args) -> int:
    if args.synthetic == bool(args.data):
        raise CsvqrError("backtest needs exactly one of --data or --synthetic")
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    config = BacktestConfig(
        levels=args.levels,
        grid_C=args.grid_C if args.grid_C is not None else BacktestConfig.grid_C,
        grid_sigma=args.grid_sigma,
        tol=args.tol, max_iter=args.max_iter, thin=args.thin,
        jobs=args.jobs, seed=args.seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        if args.synthetic:
            report = run_synthetic(methods, config, n_train=args.synthetic_train,
                                   n_test=args.synthetic_test, dim=args.synthetic_dim)
        else:
            if not (args.first_month and args.last_month):
                raise CsvqrError("backtest --data requires --from and --to")
            records = _load_zone(args)
            report = run_backtest(records, methods, args.first_month,
                                  args.last_month, config)
    files = export_report(report, args.out)
    print(summarize_report(report))
    for fs in report.forecasts:
        if fs.method == CSVQR:
            note = "" if fs.converged else "  [did not converge]"
            print(f"{fs.month}: csvqr C={fs.chosen_C:g} sigma={fs.chosen_sigma:.4g}"
                  f" query_crossings={fs.query_crossings}{note}")
    seen = set()
    for w in caught:
        msg = str(w.message)
        if msg not in seen:
            seen.add(msg)
            print(f"warning: {msg}")
    print("wrote " + ", ".join(str(f) for f in files))
    return EXIT_OK


_HANDLERS = {
    "ingest": cmd_ingest,
    "features": cmd_features,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "backtest": cmd_backtest,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if "--config" in argv:
        try:
            idx = argv.index("--config")
            file_tokens = load_config_args(argv[idx + 1])
        except IndexError:
            print("error: --config needs a path", file=sys.stderr)
            return EXIT_USAGE
        except CsvqrError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DATA
        # insert after the subcommand so later (command-line) flags win
        insert_at = next((i + 1 for i, tok in enumerate(argv) if not tok.startswith("-")),
                         len(argv))
        argv = argv[:insert_at] + file_tokens + argv[insert_at:]

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except CsvqrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
