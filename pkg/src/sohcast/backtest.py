"""Rolled walk-forward backtest with point-wise confidence intervals, metrics,
a persistence baseline and the Wilcoxon signed-rank test."""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .core import write_rows
from .errors import DegenerateSample, InsufficientData, InsufficientTrainingData, ShapeError
from .reframe import SupervisedFrame
from .trees import EnsembleSpec, fit_frame, predict_frame

log = logging.getLogger(__name__)

CRITICAL_VALUE = 1.96
MAX_ROLL_FRACTION = 0.28
EXPANDING, SLIDING = "expanding", "sliding"
RUNNING, WINDOW = "running", "window"


class ProtocolWarning(UserWarning):
    pass


@dataclass(frozen=True)
class WalkForwardSpec:
    """``n_sample`` newest windows are held out; every ``n_roll``-th one is predicted.

    ``ci_mode`` chooses the set the standard error is computed over:
    ``"running"`` (all predictions so far) or ``"window"`` (the current
    iteration's predictions only).
    """

    n_sample: int
    n_roll: int = 1
    mode: str = EXPANDING
    ci_mode: str = RUNNING

    def __post_init__(self):
        if self.n_sample <= 0:
            raise ValueError("n_sample must be > 0")
        if self.n_roll < 1:
            raise ValueError("n_roll must be >= 1")
        if self.mode not in (EXPANDING, SLIDING):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.ci_mode not in (RUNNING, WINDOW):
            raise ValueError(f"unknown ci_mode {self.ci_mode!r}")


def check_protocol(n_sample: int, window: int, n_roll: int) -> list[str]:
    """Warn when a configuration breaks sample > window > 2 * roll or rolls too far."""
    problems = []
    if not n_sample > window > 2 * n_roll:
        problems.append(f"sample {n_sample} > window {window} > 2 x roll {n_roll} does not hold")
    if n_roll > MAX_ROLL_FRACTION * window:
        problems.append(f"roll {n_roll} exceeds {MAX_ROLL_FRACTION:.0%} of window {window}")
    for msg in problems:
        warnings.warn(msg, ProtocolWarning, stacklevel=2)
    return problems


@dataclass(frozen=True)
class MetricSet:
    mae: float
    rmse: float
    r2: float  # NaN when the truth is constant
    evar: float

    def to_dict(self) -> dict:
        return {k: (None if math.isnan(v) else v) for k, v in vars(self).items()}


def metrics(truth, predictions) -> MetricSet:
    y = np.asarray(truth, dtype=float).ravel()
    p = np.asarray(predictions, dtype=float).ravel()
    if len(y) != len(p) or len(y) == 0:
        raise ShapeError("truth and predictions must have equal nonzero length")
    err = y - p
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err**2)))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    var_y = float(np.var(y))
    if ss_tot == 0:
        return MetricSet(mae, rmse, math.nan, math.nan)
    r2 = 1.0 - float(np.sum(err**2)) / ss_tot
    evar = 1.0 - float(np.var(err)) / var_y
    return MetricSet(mae, rmse, r2, evar)


def pointwise_ci(predictions_so_far) -> float:
    """Half-width 1.96 * s / sqrt(n), with s the n-1 sample standard deviation."""
    x = np.asarray(predictions_so_far, dtype=float).ravel()
    n = len(x)
    if n == 0:
        raise InsufficientData("no predictions")
    if n == 1:
        return 0.0
    return float(CRITICAL_VALUE * np.std(x, ddof=1) / math.sqrt(n))


def naive_forecast(frame: SupervisedFrame) -> np.ndarray:
    """Persistence: every target equals the last observed target value."""
    if frame.horizon != 1:
        raise ShapeError("persistence baseline needs horizon 1")
    return np.asarray(frame.prev_target, dtype=float).copy()


@dataclass
class BacktestReport:
    dates: np.ndarray
    truth: np.ndarray
    predictions: np.ndarray
    ci_half_width: np.ndarray
    degenerate_ci: np.ndarray
    iteration_log: list[tuple[int, int]]
    metrics: MetricSet
    naive_metrics: MetricSet | None = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.predictions)
        if not (len(self.truth) == len(self.ci_half_width) == len(self.dates) == n):
            raise ShapeError("report arrays must have equal length")

    @property
    def ci_lo(self) -> np.ndarray:
        return self.predictions - self.ci_half_width

    @property
    def ci_hi(self) -> np.ndarray:
        return self.predictions + self.ci_half_width

    def to_csv(self, path) -> None:
        rows = (
            [str(d), repr(float(t)), repr(float(p)), repr(float(lo)), repr(float(hi))]
            for d, t, p, lo, hi in zip(self.dates, self.truth, self.predictions, self.ci_lo, self.ci_hi)
        )
        write_rows(path, ["date", "truth", "prediction", "ci_lo", "ci_hi"], rows)

    def metrics_dict(self) -> dict:
        out = {"model": self.metrics.to_dict()}
        if self.naive_metrics is not None:
            out["naive"] = self.naive_metrics.to_dict()
        out["n_points"] = int(len(self.predictions))
        out["iterations"] = [list(map(int, it)) for it in self.iteration_log]
        out["config"] = self.config
        return out

    def metrics_json(self) -> str:
        return json.dumps(self.metrics_dict(), indent=2, sort_keys=True)


def read_report_csv(path) -> dict[str, np.ndarray]:
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    unit = "M" if rows and len(rows[0]["date"]) == 7 else "D"
    out = {"date": np.array([r["date"] for r in rows], dtype=f"datetime64[{unit}]")}
    for k in ("truth", "prediction", "ci_lo", "ci_hi"):
        out[k] = np.array([float(r[k]) for r in rows])
    return out


FitPredict = Callable[[SupervisedFrame, np.ndarray, np.ndarray], np.ndarray]


def ensemble_fit_predict(spec: EnsembleSpec) -> FitPredict:
    def run(frame: SupervisedFrame, train_rows: np.ndarray, X: np.ndarray) -> np.ndarray:
        return predict_frame(fit_frame(frame, spec, train_rows), X)

    return run


def evaluation_rows(n_rows: int, spec: WalkForwardSpec) -> np.ndarray:
    """Frame indices of the rolled evaluation windows: every n_roll-th test window."""
    if spec.n_sample >= n_rows:
        raise InsufficientTrainingData(f"n_sample {spec.n_sample} leaves no training windows out of {n_rows}")
    first = n_rows - spec.n_sample
    return np.arange(first, n_rows, spec.n_roll)


def training_rows(n_rows: int, spec: WalkForwardSpec, iteration: int, horizon: int = 1) -> np.ndarray:
    """Rows the model is fitted on at ``iteration``.

    Before iteration T the training set holds every window preceding the T-th
    evaluation window; the sliding variant also drops ``n_roll`` windows from
    its head per completed iteration. Windows whose targets would overlap the
    evaluated window's targets (horizon > 1) are purged.
    """
    first = n_rows - spec.n_sample
    stop = first + iteration * spec.n_roll
    start = iteration * spec.n_roll if spec.mode == SLIDING else 0
    stop = stop - (horizon - 1)
    return np.arange(start, max(start, stop))


def walk_forward(
    frame: SupervisedFrame,
    model: EnsembleSpec | FitPredict,
    spec: WalkForwardSpec,
) -> BacktestReport:
    """Refit on the training windows, predict the next rolled window, repeat."""
    n = len(frame)
    fit_predict = ensemble_fit_predict(model) if isinstance(model, EnsembleSpec) else model
    evals = evaluation_rows(n, spec)
    preds, truth, dates, ci, degenerate, log_rows = [], [], [], [], [], []
    for it, row in enumerate(evals):
        train = training_rows(n, spec, it, frame.horizon)
        if len(train) == 0:
            raise InsufficientTrainingData(f"iteration {it} has no training windows")
        p = np.asarray(fit_predict(frame, train, frame.X[row : row + 1]), dtype=float).ravel()
        preds.extend(p)
        truth.extend(frame.y[row])
        dates.extend(frame.origin_dates[row] + np.arange(frame.horizon))
        acc = preds if spec.ci_mode == RUNNING else p
        half = pointwise_ci(acc)
        ci.extend([half] * len(p))
        degenerate.extend([len(acc) == 1] * len(p))
        log_rows.append((int(len(train)), int(row)))
        log.debug("iteration %d: %d training windows, predicting window %d", it, len(train), row)
    preds = np.array(preds)
    truth = np.array(truth)
    naive = None
    if frame.horizon == 1:
        naive = metrics(truth, frame.prev_target[evals])
    return BacktestReport(
        dates=np.array(dates),
        truth=truth,
        predictions=preds,
        ci_half_width=np.array(ci),
        degenerate_ci=np.array(degenerate, dtype=bool),
        iteration_log=log_rows,
        metrics=metrics(truth, preds),
        naive_metrics=naive,
        config={"n_sample": spec.n_sample, "n_roll": spec.n_roll, "mode": spec.mode, "window": frame.window},
    )


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    same_distribution: bool
    n: int
    exact: bool


def _exact_lower_tail(doubled_ranks: np.ndarray, w2: int) -> float:
    """P(W+ <= w) under the sign-flip null, with ranks given doubled (integers)."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled_ranks:
        counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
    counts /= 2.0 ** len(doubled_ranks)
    return float(counts[: w2 + 1].sum())


def wilcoxon_signed_rank(a, b, alpha: float = 0.05, exact_limit: int = 25) -> WilcoxonResult:
    """Two-sided paired test; the statistic is the smaller of the two signed-rank sums.

    Zero differences are dropped and tied magnitudes share averaged ranks.
    Exact null distribution up to ``exact_limit`` pairs, otherwise the normal
    approximation with continuity and tie corrections.
    """
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if d.ndim != 1:
        raise ShapeError("samples must be one-dimensional and of equal length")
    d = d[d != 0]
    if len(d) == 0:
        raise DegenerateSample("all differences are zero")
    n = len(d)
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    exact = n <= exact_limit
    if exact:
        doubled = np.rint(2 * ranks).astype(np.int64)
        p = min(1.0, 2.0 * _exact_lower_tail(doubled, int(round(2 * w))))
    else:
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
        z = (w - mean + 0.5) / math.sqrt(var)
        p = min(1.0, 2.0 * float(norm.cdf(z)))
    return WilcoxonResult(w, p, p >= alpha, n, exact)


def fleet_wilcoxon(reference, others: dict[str, Sequence[float]], alpha: float = 0.05) -> dict:
    """Test every battery's series against the reference battery's series.

    Series are paired by position over their common length.
    """
    results = {}
    for name, series in others.items():
        m = min(len(reference), len(series))
        try:
            r = wilcoxon_signed_rank(np.asarray(reference)[:m], np.asarray(series)[:m], alpha)
            results[name] = {"statistic": r.statistic, "p_value": r.p_value, "same_distribution": r.same_distribution}
        except DegenerateSample:
            results[name] = {"statistic": 0.0, "p_value": 1.0, "same_distribution": True}
    share = float(np.mean([v["same_distribution"] for v in results.values()])) if results else math.nan
    return {"alpha": alpha, "batteries": results, "same_distribution_share": share}
