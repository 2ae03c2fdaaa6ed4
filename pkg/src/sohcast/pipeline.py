"""End-to-end orchestration: features, cleaning, decomposition, tuning,
walk-forward evaluation and artifact emission."""

from __future__ import annotations

import json
import logging
import shutil
import sys
import warnings
from contextlib import contextmanager
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import emd as emd_mod
from .backtest import EXPANDING, SLIDING, BacktestReport, check_protocol, fleet_wilcoxon, walk_forward, WalkForwardSpec
from .core import DailySeries, RawTelemetry, aggregate_daily, write_rows
from .errors import ConfigError, SohcastError
from .hilbert import soh_inst_freq
from .ingest import ingest_household, ingest_telemetry, write_telemetry
from .preprocess import (
    daily_pulse_features,
    detect_pulses,
    equivalent_cycles,
    estimate_soh,
    fill_edges,
    fill_gaps,
    remove_outliers_report,
)
from .reframe import BASIC, BASIC_IMFS, INST_FREQ_CHANNEL, PREDICTOR_SETS, SplitSpec, make_frame, predictor_channels, train_size
from .svg import line_chart
from .synth import FaultBurst, FleetSynthSpec, synth_fleet
from .trees import EnsembleSpec, TreeSpec, fit_imf_predictors, grid_search

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TARGET = "soh"
OUTLIER_CHANNELS = ("voltage", "current", "soc", "ambient_temp", "charge_minutes", "energy", "delta_v", "soh")

DEFAULT_GRID = (
    EnsembleSpec("GB", 100, tree=TreeSpec(max_depth=2), subsample=0.8),
    EnsembleSpec("GB", 100, tree=TreeSpec(max_depth=3), subsample=0.8),
)
DEFAULT_IMF_GRID = (EnsembleSpec("GB", 50, tree=TreeSpec(max_depth=2, colsample_bynode=0.8)),)


@dataclass(frozen=True)
class PipelineConfig:
    telemetry: tuple[str, ...] = ()
    household: str | None = None
    synth: FleetSynthSpec | None = None
    predictor_set: str = BASIC
    windows: tuple[int, ...] = (7, 14)
    samples: tuple[int, ...] = (30,)
    rolls: tuple[int, ...] = (1,)
    modes: tuple[str, ...] = (EXPANDING,)
    waive_protocol: bool = False
    train_fraction: float = 0.7
    folds: int = 10
    grid: tuple[EnsembleSpec, ...] = DEFAULT_GRID
    imf_grid: tuple[EnsembleSpec, ...] = DEFAULT_IMF_GRID
    emd: emd_mod.EnsembleSpec = field(default_factory=lambda: emd_mod.EnsembleSpec(ensemble_size=20))
    inst_freq_component: str = "dominant"
    ambient_band: tuple[float, float] | None = None
    household_normalize: str = "minmax"
    seed: int = 0
    workers: int = 1
    output: str = "out"
    schema: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema {self.schema}, expected {SCHEMA_VERSION}")
        if self.predictor_set not in PREDICTOR_SETS:
            raise ConfigError(f"predictor_set must be one of {PREDICTOR_SETS}")
        if not self.telemetry and self.household is None and self.synth is None:
            raise ConfigError("config needs telemetry paths, a household file or a [synth] section")
        for m in self.modes:
            if m not in (EXPANDING, SLIDING):
                raise ConfigError(f"unknown walk-forward mode {m!r}")
        if not self.windows or min(self.windows) < 2:
            raise ConfigError("window sizes must be >= 2 (past + horizon)")
        if not self.samples or min(self.samples) < 1 or not self.rolls or min(self.rolls) < 1:
            raise ConfigError("sample and roll sizes must be >= 1")
        if not self.grid:
            raise ConfigError("model grid is empty")
        if not 0 < self.train_fraction < 1 or self.folds < 2:
            raise ConfigError("train_fraction must be in (0, 1) and folds >= 2")

    def sweep(self) -> list[tuple[int, int, int, str]]:
        return [(s, w, r, m) for w in self.windows for s in self.samples for r in self.rolls for m in self.modes]


def _spec_from_dict(d: dict, seed: int) -> EnsembleSpec:
    d = dict(d)
    tree_keys = {"max_depth", "min_samples_leaf", "colsample_bytree", "colsample_bylevel", "colsample_bynode", "split_mode"}
    tree_doc = dict(d.pop("tree", {}))
    tree_doc.update({k: d.pop(k) for k in list(d) if k in tree_keys})
    tree = TreeSpec(**tree_doc)
    d.setdefault("seed", seed)
    return EnsembleSpec(tree=tree, **d)


def config_from_dict(doc: dict[str, Any], base_dir: Path | None = None) -> PipelineConfig:
    try:
        doc = dict(doc)
        schema = doc.get("schema", None)
        if schema is None:
            raise ConfigError("config must declare 'schema'")
        data = doc.get("data", {})
        pipe = doc.get("pipeline", {})
        seed = int(pipe.get("seed", doc.get("seed", 0)))

        def resolve(p):
            p = Path(p)
            return str(p if p.is_absolute() or base_dir is None else base_dir / p)

        synth = None
        if "synth" in doc:
            s = dict(doc["synth"])
            s["faults"] = tuple(FaultBurst(**f) for f in s.get("faults", ()))
            s.setdefault("seed", seed)
            synth = FleetSynthSpec(**s)
        emd_doc = dict(doc.get("emd", {}))
        emd_doc.setdefault("seed", seed)
        emd_doc.setdefault("ensemble_size", 20)
        kw: dict[str, Any] = dict(
            telemetry=tuple(resolve(p) for p in data.get("telemetry", ())),
            household=resolve(data["household"]) if data.get("household") else None,
            synth=synth,
            emd=emd_mod.EnsembleSpec(**emd_doc),
            seed=seed,
            schema=int(schema),
        )
        for key in ("predictor_set", "waive_protocol", "train_fraction", "folds", "inst_freq_component",
                    "household_normalize", "workers"):
            if key in pipe:
                kw[key] = pipe[key]
        for key in ("windows", "samples", "rolls", "modes"):
            if key in pipe:
                kw[key] = tuple(pipe[key])
        if "ambient_band" in pipe:
            kw["ambient_band"] = tuple(pipe["ambient_band"])
        if "output" in pipe:
            kw["output"] = resolve(pipe["output"])
        if "grid" in doc:
            kw["grid"] = tuple(_spec_from_dict(g, seed) for g in doc["grid"])
        else:
            kw["grid"] = tuple(replace(g, seed=seed) for g in DEFAULT_GRID)
        if "imf_grid" in doc:
            kw["imf_grid"] = tuple(_spec_from_dict(g, seed) for g in doc["imf_grid"])
        else:
            kw["imf_grid"] = tuple(replace(g, seed=seed) for g in DEFAULT_IMF_GRID)
        return PipelineConfig(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = config_from_dict(doc, path.parent)
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


# ---- per-battery steps ----------------------------------------------------


@contextmanager
def stage(name: str, unit: str = ""):
    """Tag any toolkit error raised inside with the pipeline stage it came from."""
    try:
        yield
    except SohcastError as exc:
        if not hasattr(exc, "stage"):
            exc.stage = f"{unit}:{name}" if unit else name
        raise


def build_daily_features(raw: RawTelemetry, ambient_band: tuple[float, float] | None = None) -> DailySeries:
    """Daily basic signals, charging features, equivalent cycles and SoH, before outlier removal."""
    raw = raw.sorted_unique()
    # SOC is accepted as-is at ingest; physically impossible readings go here
    raw = raw.take(np.flatnonzero((raw.soc >= 0) & (raw.soc <= 100)))
    if ambient_band is not None:
        raw = raw.filter_ambient(*ambient_band)
    daily = aggregate_daily(raw)
    pulses = detect_pulses(raw)
    feats = daily_pulse_features(pulses, daily.dates)
    soh = estimate_soh(pulses, daily.dates)
    cycles = equivalent_cycles(pulses, daily.dates)
    chans = {"day": np.arange(len(daily), dtype=float)}
    chans.update(daily.channels)
    chans["charge_minutes"] = feats["charge_minutes"]
    chans["energy"] = feats["energy"]
    chans["delta_v"] = feats["delta_v"]
    chans["cycles"] = cycles.equivalent_cycles
    chans[TARGET] = soh.soh
    return DailySeries(daily.dates, chans, TARGET)


def clean_series(series: DailySeries, outlier_channels: Sequence[str] = OUTLIER_CHANNELS) -> tuple[DailySeries, dict]:
    """IQR outlier removal, then gap imputation on every channel."""
    removed = {}
    out = series
    for ch in outlier_channels:
        if ch in out.channels:
            out, removed[ch] = remove_outliers_report(out, ch)
    for ch in out.names:
        out = out.with_channel(ch, fill_gaps(fill_edges(out[ch])))
    return out, removed


def add_decomposition(series: DailySeries, spec: emd_mod.EnsembleSpec, component: str = "dominant"):
    d = emd_mod.decompose(series[TARGET], spec)
    try:
        freq = soh_inst_freq(d, component)
    except SohcastError:
        freq = np.zeros(len(series))
    return series.with_channel(INST_FREQ_CHANNEL, freq), d


def prepare_battery(raw: RawTelemetry, cfg: PipelineConfig, name: str = ""):
    with stage("features", name):
        series = build_daily_features(raw, cfg.ambient_band)
    with stage("clean", name):
        series, removed = clean_series(series)
    with stage("decompose", name):
        series, d = add_decomposition(series, cfg.emd, cfg.inst_freq_component)
    if cfg.predictor_set == BASIC_IMFS:
        lagged, _ = predictor_channels(BASIC, series.names)
        basic = [c for c in lagged if c != TARGET]
        with stage("component-models", name):
            series = fit_imf_predictors(
                series, d, cfg.imf_grid, past=min(cfg.windows) - 1,
                split=SplitSpec(cfg.train_fraction, cfg.folds), basic=basic,
            )
    return series, d, removed


HOUSEHOLD = "household"


def frame_channels(series: DailySeries, predictor_set: str, target: str) -> tuple[list[str], list[str]]:
    """Lagged and current channels; the household set lags every column, target first."""
    if predictor_set == HOUSEHOLD:
        return [target] + [c for c in series.names if c != target], []
    return predictor_channels(predictor_set, series.names, target)


def tune_window(series: DailySeries, window: int, cfg: PipelineConfig, target: str = TARGET, predictor_set=None):
    predictor_set = predictor_set or cfg.predictor_set
    lagged, current = frame_channels(series, predictor_set, target)
    frame = make_frame(series, lagged, target, window - 1, 1, current=current, predictor_set=predictor_set)
    k = train_size(len(frame), cfg.train_fraction)
    folds = max(2, min(cfg.folds, k - 1))
    best, table = grid_search(frame.take(slice(0, k)), list(cfg.grid), folds)
    return frame, best, table


def _report_name(sample: int, window: int, roll: int, mode: str) -> str:
    return f"s{sample}_w{window}_r{roll}_{mode}"


def emit_report(report: BacktestReport, outdir: Path, name: str, title: str) -> None:
    report.to_csv(outdir / f"report_{name}.csv")
    (outdir / f"metrics_{name}.json").write_text(report.metrics_json() + "\n")
    svg = line_chart(report.dates, report.truth, report.predictions, report.ci_lo, report.ci_hi, title)
    (outdir / f"chart_{name}.svg").write_text(svg)


def evaluate_series(name: str, series: DailySeries, cfg: PipelineConfig, outdir: Path, target: str = TARGET,
                    predictor_set=None) -> list[dict]:
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    tuning = {}
    warned = set()
    for window in cfg.windows:
        with stage(f"tune-w{window}", name):
            frame, best, table = tune_window(series, window, cfg, target, predictor_set)
        tuning[str(window)] = {"best": best.to_dict(), "cv": table}
        for sample, w, roll, mode in [c for c in cfg.sweep() if c[1] == window]:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                problems = check_protocol(sample, window, roll)
            if problems and not cfg.waive_protocol and (sample, window, roll) not in warned:
                warned.add((sample, window, roll))
                log.warning("%s: sample=%d window=%d roll=%d violates the sweep protocol (%s); running anyway",
                            name, sample, window, roll, "; ".join(problems))
            if sample >= len(frame):
                log.warning("%s: sample %d >= %d windows, skipped", name, sample, len(frame))
                continue
            rname = _report_name(sample, window, roll, mode)
            with stage(f"backtest-{rname}", name):
                rep = walk_forward(frame, best, WalkForwardSpec(sample, roll, mode))
            emit_report(rep, outdir, rname, f"{name} {rname}")
            rows.append(
                {
                    "battery": name,
                    "predictor_set": frame.predictor_set,
                    "window": window,
                    "sample": sample,
                    "roll": roll,
                    "mode": mode,
                    "method": best.method,
                    "n_estimators": best.n_estimators,
                    "max_depth": best.tree.max_depth,
                    "mae": rep.metrics.mae,
                    "rmse": rep.metrics.rmse,
                    "r2": rep.metrics.r2,
                    "evar": rep.metrics.evar,
                    "naive_mae": rep.naive_metrics.mae,
                    "naive_rmse": rep.naive_metrics.rmse,
                }
            )
    (outdir / "tuning.json").write_text(json.dumps(tuning, indent=2, sort_keys=True) + "\n")
    return rows


def run_battery(name: str, raw: RawTelemetry, cfg: PipelineConfig, outdir: Path) -> tuple[list[dict], np.ndarray]:
    series, d, removed = prepare_battery(raw, cfg, name)
    outdir.mkdir(parents=True, exist_ok=True)
    series.to_csv(outdir / "daily.csv")
    write_rows(
        outdir / "decomposition.csv",
        ["date"] + [f"imf_{k + 1}" for k in range(d.n_imfs)] + ["residue"],
        ([str(dt)] + [repr(float(v)) for v in col] for dt, col in zip(series.dates, d.as_array().T)),
    )
    (outdir / "cleaning.json").write_text(json.dumps({"removed_fraction": removed}, indent=2, sort_keys=True) + "\n")
    rows = evaluate_series(name, series, cfg, outdir)
    return rows, np.asarray(series[TARGET])


def normalize_minmax(series: DailySeries, channels: Sequence[str]) -> DailySeries:
    out = series
    for ch in channels:
        v = out[ch]
        lo, hi = np.nanmin(v), np.nanmax(v)
        out = out.with_channel(ch, (v - lo) / (hi - lo) if hi > lo else v - lo)
    return out


def prepare_household(path, normalize: str = "minmax") -> DailySeries:
    series = ingest_household(path)
    for ch in series.names:
        series = series.with_channel(ch, fill_gaps(fill_edges(series[ch])))
    if normalize == "minmax":
        series = normalize_minmax(series, series.names)
    return series


def _battery_job(args):
    name, path, cfg, outdir = args
    if isinstance(path, RawTelemetry):
        raw = path
    else:
        with stage("ingest", name):
            raw = ingest_telemetry(path)
    return run_battery(name, raw, cfg, outdir)


def comparison_rows(rows: list[dict]) -> list[dict]:
    """Flag the minimum-MAE row of each battery as its best model."""
    best = {}
    for i, r in enumerate(rows):
        b = r["battery"]
        if b not in best or r["mae"] < rows[best[b]]["mae"]:
            best[b] = i
    return [dict(r, best=int(best[r["battery"]] == i)) for i, r in enumerate(rows)]


COMPARISON_COLUMNS = ["battery", "predictor_set", "window", "sample", "roll", "mode", "method", "n_estimators",
                      "max_depth", "mae", "rmse", "r2", "evar", "naive_mae", "naive_rmse", "best"]


def _fmt_cell(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run every configured input to completion and write artifacts under ``cfg.output``.

    Artifacts are staged in a sibling directory and only moved into place when
    the whole run succeeds.
    """
    final = Path(cfg.output)
    stage = final.with_name(final.name + ".partial")
    if stage.exists():
        shutil.rmtree(stage)
    stage.mkdir(parents=True)
    try:
        summary = _run(cfg, stage)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    final.mkdir(parents=True, exist_ok=True)
    for item in sorted(stage.rglob("*")):
        dest = final / item.relative_to(stage)
        if item.is_dir():
            dest.mkdir(parents=True, exist_ok=True)
        else:
            dest.parent.mkdir(parents=True, exist_ok=True)
            shutil.move(str(item), dest)
    shutil.rmtree(stage)
    return summary


def _run(cfg: PipelineConfig, root: Path) -> dict:
    jobs = []
    if cfg.synth is not None:
        fleet = synth_fleet(cfg.synth)
        inputs = root / "inputs"
        inputs.mkdir()
        for i, raw in enumerate(fleet):
            write_telemetry(raw, inputs / f"battery_{i:02d}.csv")
            jobs.append((f"battery_{i:02d}", raw, cfg, root / f"battery_{i:02d}"))
    for path in cfg.telemetry:
        name = Path(path).stem
        jobs.append((name, path, cfg, root / name))

    rows: list[dict] = []
    soh_by_battery: dict[str, np.ndarray] = {}
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_battery_job, jobs))
    else:
        results = [_battery_job(j) for j in jobs]
    for (name, *_), (brows, soh) in zip(jobs, results):
        rows += brows
        soh_by_battery[name] = soh

    summary: dict[str, Any] = {"batteries": sorted(soh_by_battery)}
    if cfg.household is not None:
        with stage("ingest", "household"):
            series = prepare_household(cfg.household, cfg.household_normalize)
        rows += evaluate_series("household", series, cfg, root / "household", target=series.target,
                                predictor_set=HOUSEHOLD)

    table = comparison_rows(rows)
    write_rows(root / "comparison.csv", COMPARISON_COLUMNS,
               ([_fmt_cell(r[c]) for c in COMPARISON_COLUMNS] for r in table))
    summary["best"] = [r for r in table if r["best"]]
    if len(soh_by_battery) > 1:
        names = sorted(soh_by_battery)
        ref = names[0]
        summary["wilcoxon"] = {"reference": ref, **fleet_wilcoxon(soh_by_battery[ref],
                                                                  {n: soh_by_battery[n] for n in names[1:]})}
    (root / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n")
    return summary
