"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from . import emd as emd_mod
from .backtest import EXPANDING, SLIDING, WalkForwardSpec, check_protocol, read_report_csv, walk_forward
from .core import DailySeries, write_rows
from .errors import ConfigError, DataError
from .ingest import ingest_telemetry, write_telemetry
from .pipeline import (
    DEFAULT_GRID,
    TARGET,
    PipelineConfig,
    add_decomposition,
    build_daily_features,
    clean_series,
    emit_report,
    load_config,
    run_pipeline,
    tune_window,
)
from .reframe import BASIC, PREDICTOR_SETS, make_frame, predictor_channels
from .svg import line_chart
from .synth import FleetSynthSpec, synth_fleet
from .trees import EnsembleSpec, TreeSpec

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4

log = logging.getLogger("sohcast")


def _cmd_ingest(args) -> int:
    raw = ingest_telemetry(args.telemetry)
    band = tuple(args.ambient_band) if args.ambient_band else None
    series = build_daily_features(raw, band)
    if not args.no_clean:
        series, removed = clean_series(series)
        for ch, frac in removed.items():
            log.info("%s: %.2f%% removed as outliers", ch, 100 * frac)
    series.to_csv(args.out)
    return EXIT_OK


def _cmd_synth(args) -> int:
    spec = FleetSynthSpec(
        n_batteries=args.batteries,
        years=args.years,
        degradation_pp_per_year=args.degradation,
        pulse_rate=args.pulse_rate,
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, raw in enumerate(synth_fleet(spec)):
        write_telemetry(raw, out / f"battery_{i:02d}.csv")
    return EXIT_OK


def _cmd_decompose(args) -> int:
    series = DailySeries.from_csv(args.daily, TARGET)
    spec = emd_mod.EnsembleSpec(ensemble_size=args.ensemble_size, noise_std=args.noise_std, seed=args.seed)
    series, d = add_decomposition(series, spec, args.component)
    series.to_csv(args.out)
    if args.imfs:
        write_rows(
            args.imfs,
            ["date"] + [f"imf_{k + 1}" for k in range(d.n_imfs)] + ["residue"],
            ([str(dt)] + [repr(float(v)) for v in col] for dt, col in zip(series.dates, d.as_array().T)),
        )
    return EXIT_OK


def _grid(args) -> tuple[EnsembleSpec, ...]:
    if args.config:
        return load_config(args.config).grid
    if args.method:
        return (
            EnsembleSpec(
                args.method, args.n_estimators, learning_rate=args.learning_rate,
                tree=TreeSpec(max_depth=args.max_depth), seed=args.seed,
            ),
        )
    return tuple(replace(g, seed=args.seed) for g in DEFAULT_GRID)


def _cmd_tune(args) -> int:
    series = DailySeries.from_csv(args.daily, args.target)
    cfg = PipelineConfig(telemetry=(str(args.daily),), grid=_grid(args), folds=args.folds, seed=args.seed,
                         predictor_set=args.predictor_set)
    _, best, table = tune_window(series, args.window, cfg, args.target)
    doc = {"window": args.window, "best": best.to_dict(), "cv": table}
    Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _cmd_backtest(args) -> int:
    series = DailySeries.from_csv(args.daily, args.target)
    if args.model:
        spec = EnsembleSpec.from_dict(json.loads(Path(args.model).read_text())["best"])
    else:
        spec = _grid(args)[0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        problems = check_protocol(args.sample, args.window, args.roll)
    if problems and not args.waive_protocol:
        log.warning("sample=%d window=%d roll=%d violates the sweep protocol (%s); running anyway",
                    args.sample, args.window, args.roll, "; ".join(problems))
    lagged, current = predictor_channels(args.predictor_set, series.names, args.target)
    frame = make_frame(series, lagged, args.target, args.window - 1, 1, current=current,
                       predictor_set=args.predictor_set)
    rep = walk_forward(frame, spec, WalkForwardSpec(args.sample, args.roll, args.mode))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = f"s{args.sample}_w{args.window}_r{args.roll}_{args.mode}"
    emit_report(rep, out, name, name)
    print(json.dumps(rep.metrics_dict()["model"], sort_keys=True))
    return EXIT_OK


def _cmd_report(args) -> int:
    rep = read_report_csv(args.report)
    svg = line_chart(rep["date"], rep["truth"], rep["prediction"], rep["ci_lo"], rep["ci_hi"],
                     args.title or Path(args.report).stem)
    Path(args.out).write_text(svg)
    return EXIT_OK


def _cmd_run(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.output:
        overrides["output"] = args.output
    if args.workers:
        overrides["workers"] = args.workers
    if args.waive_protocol:
        overrides["waive_protocol"] = True
    cfg = load_config(args.config)
    if "seed" in overrides:
        # reseed every random component, not only the top-level field
        seed = overrides["seed"]
        overrides["grid"] = tuple(replace(g, seed=seed) for g in cfg.grid)
        overrides["imf_grid"] = tuple(replace(g, seed=seed) for g in cfg.imf_grid)
        overrides["emd"] = replace(cfg.emd, seed=seed)
        if cfg.synth is not None:
            overrides["synth"] = replace(cfg.synth, seed=seed)
    try:
        cfg = replace(cfg, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    summary = run_pipeline(cfg)
    for row in summary["best"]:
        print(f"{row['battery']}: best window={row['window']} sample={row['sample']} roll={row['roll']} "
              f"mode={row['mode']} MAE={row['mae']:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sohcast", description="Battery SoH forecasting toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="telemetry CSV -> cleaned daily feature CSV")
    s.add_argument("telemetry")
    s.add_argument("--out", required=True)
    s.add_argument("--ambient-band", nargs=2, type=float, metavar=("LO", "HI"))
    s.add_argument("--no-clean", action="store_true", help="skip outlier removal and imputation")
    s.set_defaults(func=_cmd_ingest)

    s = sub.add_parser("synth", help="write a seeded synthetic fleet as telemetry CSVs")
    s.add_argument("--out", required=True)
    s.add_argument("--batteries", type=int, default=3)
    s.add_argument("--years", type=float, default=3.0)
    s.add_argument("--degradation", type=float, default=2.2, help="pp per year")
    s.add_argument("--pulse-rate", type=float, default=2.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("decompose", help="add the lagged instantaneous-frequency channel")
    s.add_argument("daily")
    s.add_argument("--out", required=True)
    s.add_argument("--imfs", help="also write the components to this CSV")
    s.add_argument("--ensemble-size", type=int, default=20)
    s.add_argument("--noise-std", type=float, default=0.2)
    s.add_argument("--component", choices=["dominant", "first", "weighted"], default="dominant")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_decompose)

    def model_args(s):
        s.add_argument("--target", default=TARGET)
        s.add_argument("--window", type=int, default=14)
        s.add_argument("--predictor-set", choices=PREDICTOR_SETS, default=BASIC)
        s.add_argument("--config", help="take the model grid from this TOML config")
        s.add_argument("--method", choices=["GB", "RF", "ETR"])
        s.add_argument("--n-estimators", type=int, default=100)
        s.add_argument("--max-depth", type=int, default=3)
        s.add_argument("--learning-rate", type=float, default=0.1)
        s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("tune", help="grid search on the training split with time-series CV")
    s.add_argument("daily")
    s.add_argument("--out", required=True)
    s.add_argument("--folds", type=int, default=10)
    model_args(s)
    s.set_defaults(func=_cmd_tune)

    s = sub.add_parser("backtest", help="walk-forward evaluation of one configuration")
    s.add_argument("daily")
    s.add_argument("--out", required=True)
    s.add_argument("--model", help="tuning JSON from 'tune'")
    s.add_argument("--sample", type=int, default=30)
    s.add_argument("--roll", type=int, default=1)
    s.add_argument("--mode", choices=[EXPANDING, SLIDING], default=EXPANDING)
    s.add_argument("--waive-protocol", action="store_true")
    model_args(s)
    s.set_defaults(func=_cmd_backtest)

    s = sub.add_parser("report", help="render a backtest report CSV as an SVG chart")
    s.add_argument("report")
    s.add_argument("--out", required=True)
    s.add_argument("--title")
    s.set_defaults(func=_cmd_report)

    s = sub.add_parser("run", help="full pipeline from a TOML config")
    s.add_argument("config")
    s.add_argument("--seed", type=int)
    s.add_argument("--output")
    s.add_argument("--workers", type=int)
    s.add_argument("--waive-protocol", action="store_true")
    s.set_defaults(func=_cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        log.error("data error in %s: %s", getattr(exc, "stage", args.command), exc)
        return EXIT_DATA
    except Exception:
        log.exception("internal error in %s", args.command)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
