"""Timeseries containers, calendar alignment and daily aggregation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import EmptyInput, InsufficientData, NoSuchChannel, ShapeError, UnsortedInput

SECONDS_PER_DAY = 86400
TELEMETRY_CHANNELS = ("voltage", "current", "soc", "ambient_temp")

Reducer = Callable[[np.ndarray, np.ndarray, int], np.ndarray]


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RawTelemetry:
    """Parallel per-sample arrays; ``timestamps`` are seconds since the epoch (UTC).

    ``current`` is signed, positive while charging.
    """

    timestamps: np.ndarray
    voltage: np.ndarray
    current: np.ndarray
    soc: np.ndarray
    ambient_temp: np.ndarray

    def __post_init__(self):
        for name in ("timestamps",) + TELEMETRY_CHANNELS:
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = len(self.timestamps)
        for name in TELEMETRY_CHANNELS:
            if len(getattr(self, name)) != n:
                raise ShapeError(f"column {name!r} has length {len(getattr(self, name))}, expected {n}")

    def __len__(self) -> int:
        return len(self.timestamps)

    def column(self, name: str) -> np.ndarray:
        if name not in ("timestamps",) + TELEMETRY_CHANNELS:
            raise NoSuchChannel(name)
        return getattr(self, name)

    def take(self, idx) -> "RawTelemetry":
        return RawTelemetry(*(getattr(self, n)[idx] for n in ("timestamps",) + TELEMETRY_CHANNELS))

    def sorted_unique(self) -> "RawTelemetry":
        """Sort by time and drop duplicate timestamps, keeping the last sample."""
        order = np.argsort(self.timestamps, kind="stable")
        ts = self.timestamps[order]
        keep = np.ones(len(ts), dtype=bool)
        keep[:-1] = ts[1:] != ts[:-1]
        return self.take(order[keep])

    def filter_ambient(self, low: float, high: float) -> "RawTelemetry":
        """Drop samples whose ambient temperature lies outside ``[low, high]``."""
        mask = (self.ambient_temp >= low) & (self.ambient_temp <= high)
        return self.take(np.flatnonzero(mask))

    @classmethod
    def concatenate(cls, parts: Sequence["RawTelemetry"]) -> "RawTelemetry":
        cols = ("timestamps",) + TELEMETRY_CHANNELS
        return cls(*(np.concatenate([getattr(p, c) for p in parts]) for c in cols))


def _is_contiguous(dates: np.ndarray) -> bool:
    if len(dates) < 2:
        return True
    return bool(np.all(np.diff(dates).astype(np.int64) == 1))


@dataclass(frozen=True)
class DailySeries:
    """A regular calendar series: one value per channel per period.

    ``dates`` is a ``datetime64[D]`` array for daily data (``datetime64[M]`` for
    the monthly household series). Missing values are NaN until imputed.
    """

    dates: np.ndarray
    channels: Mapping[str, np.ndarray]
    target: str | None = None

    def __post_init__(self):
        dates = np.array(self.dates, copy=True)
        if dates.dtype.kind != "M":
            dates = dates.astype("datetime64[D]")
        dates.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        if not _is_contiguous(dates):
            raise ShapeError("dates must form a contiguous range")
        chans = {}
        for name, values in self.channels.items():
            arr = _frozen(values)
            if arr.shape != (len(dates),):
                raise ShapeError(f"channel {name!r} has shape {arr.shape}, expected ({len(dates)},)")
            chans[name] = arr
        object.__setattr__(self, "channels", chans)
        if self.target is not None and self.target not in chans:
            raise NoSuchChannel(self.target)

    def __len__(self) -> int:
        return len(self.dates)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.channels[name]
        except KeyError:
            raise NoSuchChannel(name) from None

    @property
    def names(self) -> list[str]:
        return list(self.channels)

    def with_channel(self, name: str, values) -> "DailySeries":
        chans = dict(self.channels)
        chans[name] = values
        return DailySeries(self.dates, chans, self.target)

    def with_target(self, name: str) -> "DailySeries":
        return DailySeries(self.dates, self.channels, name)

    def select(self, names: Sequence[str]) -> "DailySeries":
        target = self.target if self.target in names else None
        return DailySeries(self.dates, {n: self[n] for n in names}, target)

    def slice(self, start: int, stop: int) -> "DailySeries":
        return DailySeries(
            self.dates[start:stop], {k: v[start:stop] for k, v in self.channels.items()}, self.target
        )

    def missing_count(self) -> int:
        return int(sum(np.isnan(v).sum() for v in self.channels.values()))

    def to_csv(self, path) -> None:
        names = self.names
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date"] + names)
            for i, d in enumerate(self.dates):
                w.writerow([str(d)] + [repr(float(self.channels[n][i])) for n in names])

    @classmethod
    def from_csv(cls, path, target: str | None = None) -> "DailySeries":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise EmptyInput(f"{path}: no data rows")
        header, body = rows[0], rows[1:]
        if header[0] != "date":
            raise ShapeError(f"{path}: first column must be 'date'")
        unit = "M" if len(body[0][0]) == 7 else "D"
        dates = np.array([r[0] for r in body], dtype=f"datetime64[{unit}]")
        chans = {name: np.array([float(r[j + 1]) for r in body]) for j, name in enumerate(header[1:])}
        return cls(dates, chans, target)


@dataclass(frozen=True)
class SeriesStats:
    q1: float
    q3: float
    iqr: float = field(init=False)
    lower_fence: float = field(init=False)
    upper_fence: float = field(init=False)

    def __post_init__(self):
        iqr = self.q3 - self.q1
        object.__setattr__(self, "iqr", iqr)
        object.__setattr__(self, "lower_fence", self.q1 - 1.5 * iqr)
        object.__setattr__(self, "upper_fence", self.q3 + 1.5 * iqr)

    def inside(self, values: np.ndarray) -> np.ndarray:
        return (values >= self.lower_fence) & (values <= self.upper_fence)


def quartile_stats(values) -> SeriesStats:
    """Quartiles with linear interpolation between order statistics (R-7)."""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if len(x) < 4:
        raise InsufficientData(f"need at least 4 finite values, got {len(x)}")
    q1, q3 = np.quantile(x, [0.25, 0.75], method="linear")
    return SeriesStats(float(q1), float(q3))


def _reduce_mean(values, day_idx, n_days):
    total = np.bincount(day_idx, weights=values, minlength=n_days)
    count = np.bincount(day_idx, minlength=n_days)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def _reduce_sum(values, day_idx, n_days):
    total = np.bincount(day_idx, weights=values, minlength=n_days)
    count = np.bincount(day_idx, minlength=n_days)
    return np.where(count > 0, total, np.nan)


def _reduce_last(values, day_idx, n_days):
    out = np.full(n_days, np.nan)
    out[day_idx] = values  # later samples overwrite earlier ones
    return out


def _reduce_extreme(fn, fill):
    def reduce(values, day_idx, n_days):
        out = np.full(n_days, fill)
        fn.at(out, day_idx, values)
        count = np.bincount(day_idx, minlength=n_days)
        out[count == 0] = np.nan
        return out

    return reduce


REDUCERS: dict[str, Reducer] = {
    "mean": _reduce_mean,
    "sum": _reduce_sum,
    "last": _reduce_last,
    "max": _reduce_extreme(np.maximum, -np.inf),
    "min": _reduce_extreme(np.minimum, np.inf),
}

DEFAULT_REDUCERS = {name: "mean" for name in TELEMETRY_CHANNELS}


def day_index(timestamps: np.ndarray) -> np.ndarray:
    """UTC calendar day number for each timestamp."""
    return np.floor_divide(np.asarray(timestamps, dtype=float), SECONDS_PER_DAY).astype(np.int64)


def aggregate_daily(raw: RawTelemetry, reducers: Mapping[str, str | Reducer] | None = None) -> DailySeries:
    """Reduce telemetry to one row per UTC calendar day.

    Days between the first and last sample that have no samples are NaN.
    ``reducers`` maps a telemetry column to ``"mean"``, ``"sum"``, ``"last"``,
    ``"max"``, ``"min"`` or a callable ``(values, day_idx, n_days) -> array``.
    """
    if len(raw) == 0:
        raise EmptyInput("telemetry has no samples")
    if np.any(np.diff(raw.timestamps) < 0):
        raise UnsortedInput("timestamps must be nondecreasing")
    reducers = dict(DEFAULT_REDUCERS if reducers is None else reducers)
    days = day_index(raw.timestamps)
    first = days[0]
    idx = days - first
    n_days = int(idx[-1]) + 1
    channels = {}
    for name, red in reducers.items():
        fn = REDUCERS[red] if isinstance(red, str) else red
        channels[name] = fn(raw.column(name), idx, n_days)
    dates = np.arange(n_days) + np.datetime64(int(first), "D")
    return DailySeries(dates, channels)


def calendar_range(start, stop) -> np.ndarray:
    """Inclusive range of ``datetime64[D]`` days."""
    start = np.datetime64(start, "D")
    stop = np.datetime64(stop, "D")
    return np.arange(start, stop + 1)


def linear_trend_per_year(dates: np.ndarray, values: np.ndarray) -> float:
    """Least-squares slope of ``values`` in units per 365.25 days."""
    t = (dates - dates[0]).astype(np.int64).astype(float)
    mask = np.isfinite(values)
    slope = np.polyfit(t[mask], values[mask], 1)[0]
    return float(slope * 365.25)


def write_rows(path: Path | str, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
