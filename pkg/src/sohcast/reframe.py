"""Supervised reframing of a daily series, chronological splits and CV folds."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DailySeries
from .errors import EmptyInput, InsufficientData, LeakageError, NoSuchChannel

BASIC = "basic"
IMFS = "IMFs"
BASIC_IMFS = "basic+IMFs"
PREDICTOR_SETS = (IMFS, BASIC, BASIC_IMFS)

BASIC_CHANNELS = (
    "day",
    "voltage",
    "current",
    "soc",
    "ambient_temp",
    "charge_minutes",
    "energy",
    "delta_v",
    "cycles",
)
INST_FREQ_CHANNEL = "inst_freq_lag1"


@dataclass(frozen=True)
class SupervisedFrame:
    """Rows of (past-window predictors -> horizon targets).

    ``X[i]`` is laid out channel-major, lag-minor. ``prev_target[i]`` is the
    last target value before row ``i``'s first target, which is what a
    persistence forecast predicts.
    """

    X: np.ndarray
    y: np.ndarray
    past: int
    horizon: int
    feature_names: tuple[str, ...]
    origin_dates: np.ndarray
    prev_target: np.ndarray
    target: str = "soh"
    predictor_set: str | None = None

    def __post_init__(self):
        for name in ("X", "y", "origin_dates", "prev_target"):
            arr = np.array(getattr(self, name), copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def window(self) -> int:
        return self.past + self.horizon

    @property
    def rows(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.X, self.y))

    def __len__(self) -> int:
        return len(self.X)

    def take(self, idx) -> "SupervisedFrame":
        idx = np.asarray(idx) if not isinstance(idx, slice) else idx
        return SupervisedFrame(
            self.X[idx],
            self.y[idx],
            self.past,
            self.horizon,
            self.feature_names,
            self.origin_dates[idx],
            self.prev_target[idx],
            self.target,
            self.predictor_set,
        )

    def to_csv(self, path) -> None:
        tnames = [f"{self.target}(t+{h})" if h else f"{self.target}(t)" for h in range(self.horizon)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["origin_date", "prev_target", *self.feature_names, *tnames])
            for d, p, x, y in zip(self.origin_dates, self.prev_target, self.X, self.y):
                w.writerow([str(d), repr(float(p)), *map(repr, x.tolist()), *map(repr, y.tolist())])

    @classmethod
    def from_csv(cls, path, past: int, horizon: int, target: str = "soh", predictor_set=None) -> "SupervisedFrame":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise EmptyInput(f"{path}: no rows")
        header, body = rows[0], rows[1:]
        n_feat = len(header) - 2 - horizon
        unit = "M" if len(body[0][0]) == 7 else "D"
        data = np.array([[float(v) for v in r[1:]] for r in body])
        return cls(
            X=data[:, 1 : 1 + n_feat],
            y=data[:, 1 + n_feat :],
            past=past,
            horizon=horizon,
            feature_names=header[2 : 2 + n_feat],
            origin_dates=np.array([r[0] for r in body], dtype=f"datetime64[{unit}]"),
            prev_target=data[:, 0],
            target=target,
            predictor_set=predictor_set,
        )


def make_frame(
    series: DailySeries,
    predictors: Sequence[str],
    target: str,
    past: int,
    horizon: int = 1,
    *,
    current: Sequence[str] = (),
    predictor_set: str | None = None,
) -> SupervisedFrame:
    """Slide a unit-stride window of ``past + horizon`` steps over ``series``.

    Channels in ``predictors`` contribute their values over ``[t-past, t)``.
    Channels in ``current`` contribute their value at ``t`` and so must be
    forecasts or known-ahead quantities; the target itself is rejected there.
    """
    if past < 1 or horizon < 1:
        raise ValueError("past and horizon must be >= 1")
    if target in current:
        raise LeakageError(f"target {target!r} cannot be an un-lagged predictor")
    for name in [*predictors, *current, target]:
        if name not in series.channels:
            raise NoSuchChannel(name)
    n = len(series)
    w = past + horizon
    if n < w:
        raise InsufficientData(f"series of length {n} is shorter than window {w}")
    n_rows = n - w + 1
    starts = np.arange(past, past + n_rows)  # index of each row's first target
    lags = np.arange(-past, 0)
    blocks, names = [], []
    for ch in predictors:
        values = series[ch]
        blocks.append(values[starts[:, None] + lags[None, :]])
        names += [f"{ch}(t-{-lag})" for lag in lags]
    for ch in current:
        blocks.append(series[ch][starts][:, None])
        names.append(f"{ch}(t)")
    X = np.hstack(blocks) if blocks else np.zeros((n_rows, 0))
    tv = series[target]
    y = tv[starts[:, None] + np.arange(horizon)[None, :]]
    return SupervisedFrame(
        X=X,
        y=y,
        past=past,
        horizon=horizon,
        feature_names=tuple(names),
        origin_dates=series.dates[starts],
        prev_target=tv[starts - 1],
        target=target,
        predictor_set=predictor_set,
    )


def predictor_channels(predictor_set: str, available: Sequence[str], target: str = "soh") -> tuple[list[str], list[str]]:
    """Lagged and un-lagged channel lists for one of the three predictor sets.

    The target's own history is always a lagged predictor. IMF and residue
    forecasts (``*_pred``) enter un-lagged since they are already forecasts
    for the target step.
    """
    if predictor_set not in PREDICTOR_SETS:
        raise ValueError(f"unknown predictor set {predictor_set!r}")
    avail = set(available)
    lagged = [target] + [c for c in BASIC_CHANNELS if c in avail and c != target]
    current: list[str] = []
    if predictor_set in (BASIC, BASIC_IMFS) and INST_FREQ_CHANNEL in avail:
        lagged.append(INST_FREQ_CHANNEL)
    if predictor_set == BASIC_IMFS:
        current = sorted(c for c in avail if c.startswith("imf_") and c.endswith("_pred"))
        if "residue_pred" in avail:
            current.append("residue_pred")
    return lagged, current


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    folds: int = 10

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")


def train_size(n_rows: int, fraction: float) -> int:
    return int(math.floor(fraction * n_rows))


def train_test_split(frame: SupervisedFrame, spec: SplitSpec = SplitSpec()) -> tuple[SupervisedFrame, SupervisedFrame]:
    """Chronological prefix/suffix split, train size floored."""
    if len(frame) == 0:
        raise EmptyInput("frame has no rows")
    k = train_size(len(frame), spec.train_fraction)
    return frame.take(slice(0, k)), frame.take(slice(k, None))


def ts_cv_folds(n_rows: int | SupervisedFrame, folds: int = 10) -> list[tuple[np.ndarray, np.ndarray]]:
    """Expanding-window folds over ``folds + 1`` contiguous blocks.

    Blocks after the first have size ``n // (folds + 1)``; the first block
    absorbs the remainder. Fold k trains on blocks 0..k, validates on k+1.
    """
    n = len(n_rows) if isinstance(n_rows, SupervisedFrame) else int(n_rows)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if n < folds + 1:
        raise InsufficientData(f"{n} rows cannot form {folds} folds")
    size = n // (folds + 1)
    first = n - folds * size
    out = []
    for k in range(folds):
        stop = first + k * size
        out.append((np.arange(0, stop), np.arange(stop, stop + size)))
    return out
