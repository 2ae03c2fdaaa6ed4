"""Cleaning and battery feature extraction.

Charging pulses are the atomic events: intervals of 5 to 30 minutes during
which SOC rises. Daily capacity is estimated from the energy put in per unit of
SOC charged, and SoH is that capacity relative to a reference window at the
start of the record.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DailySeries, RawTelemetry, day_index, quartile_stats
from .errors import InsufficientData, NoSuchChannel, UnboundedGap

log = logging.getLogger(__name__)

MIN_PULSE_MINUTES = 5.0
MAX_PULSE_MINUTES = 30.0
PLATEAU_TOLERANCE = 2
MAX_STEP_MINUTES = 5.0
REFERENCE_DAYS = 14


@dataclass(frozen=True)
class ChargingPulse:
    start: float
    end: float
    duration: float  # minutes
    delta_soc: float  # percentage points
    mean_voltage: float
    mean_current: float
    energy: float  # Wh
    delta_v: float

    @property
    def day(self) -> np.datetime64:
        return np.datetime64(int(day_index(np.array([self.start]))[0]), "D")


@dataclass(frozen=True)
class SohSeries:
    dates: np.ndarray
    soh: np.ndarray
    capacity: np.ndarray
    initial_capacity: float


@dataclass(frozen=True)
class CycleSeries:
    dates: np.ndarray
    equivalent_cycles: np.ndarray


def remove_outliers_report(series: DailySeries, channel: str) -> tuple[DailySeries, float]:
    """Mask values outside the 1.5 x IQR fences; returns the series and the removed fraction."""
    values = series[channel]
    stats = quartile_stats(values)
    present = np.isfinite(values)
    outside = present & ~stats.inside(values)
    cleaned = np.where(outside, np.nan, values)
    frac = float(outside.sum() / max(present.sum(), 1))
    return series.with_channel(channel, cleaned), frac


def remove_outliers(series: DailySeries, channel: str) -> DailySeries:
    cleaned, frac = remove_outliers_report(series, channel)
    log.info("removed %.2f%% of %r as outliers", 100 * frac, channel)
    return cleaned


def fill_gaps(values) -> np.ndarray:
    """Fill each interior NaN run with the mean of the values bracketing it."""
    x = np.array(values, dtype=float)
    missing = np.isnan(x)
    if not missing.any():
        return x
    if missing[0] or missing[-1]:
        raise UnboundedGap("first and last values must be present")
    present = np.flatnonzero(~missing)
    # for every missing index, the nearest present neighbours on each side
    pos = np.searchsorted(present, np.flatnonzero(missing))
    before = x[present[pos - 1]]
    after = x[present[pos]]
    x[missing] = 0.5 * (before + after)
    return x


def impute_gaps(series: DailySeries, channel: str) -> DailySeries:
    if channel not in series.channels:
        raise NoSuchChannel(channel)
    return series.with_channel(channel, fill_gaps(series[channel]))


def fill_edges(values) -> np.ndarray:
    """Extend the first/last present values over leading/trailing NaNs."""
    x = np.array(values, dtype=float)
    present = np.flatnonzero(np.isfinite(x))
    if len(present) == 0:
        raise InsufficientData("channel has no present values")
    x[: present[0]] = x[present[0]]
    x[present[-1] + 1 :] = x[present[-1]]
    return x


def _rising_runs(soc: np.ndarray, step_ok: np.ndarray, tolerance: int) -> list[tuple[int, int]]:
    """Index pairs (i, j) such that samples i..j form one charging run.

    A run opens on a rising step and stays open across at most ``tolerance``
    consecutive non-rising steps. It closes early on any step that is too long.
    The returned end is the last sample reached by a rising step.
    """
    rising = (np.diff(soc) > 0) & step_ok
    runs = []
    n_steps = len(rising)
    k = 0
    candidates = np.flatnonzero(rising)
    ci = 0
    while ci < len(candidates):
        k = candidates[ci]
        start = k
        last_rise = k
        stall = 0
        k += 1
        while k < n_steps and step_ok[k]:
            if rising[k]:
                last_rise = k
                stall = 0
            else:
                stall += 1
                if stall > tolerance:
                    break
            k += 1
        runs.append((start, last_rise + 1))
        ci = np.searchsorted(candidates, last_rise + 1)
    return runs


def detect_pulses(
    raw: RawTelemetry,
    *,
    min_minutes: float = MIN_PULSE_MINUTES,
    max_minutes: float = MAX_PULSE_MINUTES,
    plateau_tolerance: int = PLATEAU_TOLERANCE,
    max_step_minutes: float = MAX_STEP_MINUTES,
) -> list[ChargingPulse]:
    """Find charging pulses in time-sorted telemetry.

    Energy is the left-point sum of voltage * current * dt over the pulse, in Wh.
    Runs whose duration falls outside ``[min_minutes, max_minutes]`` are dropped.
    """
    if len(raw) < 2:
        return []
    ts, soc = raw.timestamps, raw.soc
    dt = np.diff(ts)
    step_ok = (dt > 0) & (dt <= max_step_minutes * 60.0)
    pulses = []
    for i, j in _rising_runs(soc, step_ok, plateau_tolerance):
        duration = (ts[j] - ts[i]) / 60.0
        if not (min_minutes <= duration <= max_minutes):
            continue
        v = raw.voltage[i : j + 1]
        cur = raw.current[i : j + 1]
        energy = float(np.sum(v[:-1] * cur[:-1] * dt[i:j]) / 3600.0)
        pulses.append(
            ChargingPulse(
                start=float(ts[i]),
                end=float(ts[j]),
                duration=float(duration),
                delta_soc=float(soc[j] - soc[i]),
                mean_voltage=float(v.mean()),
                mean_current=float(cur.mean()),
                energy=max(energy, 0.0),
                delta_v=float(v[-1] - v[0]),
            )
        )
    return pulses


def _pulse_days(pulses: Sequence[ChargingPulse], dates: np.ndarray) -> np.ndarray:
    if not pulses:
        return np.zeros(0, dtype=np.int64)
    days = day_index(np.array([p.start for p in pulses]))
    return days - dates[0].astype("datetime64[D]").astype(np.int64)


def daily_pulse_features(pulses: Sequence[ChargingPulse], dates: np.ndarray) -> dict[str, np.ndarray]:
    """Per-day charging totals; days without pulses get NaN (count gets 0)."""
    n = len(dates)
    idx = _pulse_days(pulses, dates)
    keep = (idx >= 0) & (idx < n)
    idx = idx[keep]
    ps = [p for p, k in zip(pulses, keep) if k]

    def per_day(attr, how="sum"):
        w = np.array([getattr(p, attr) for p in ps], dtype=float)
        total = np.bincount(idx, weights=w, minlength=n)
        if how == "mean":
            cnt = np.bincount(idx, minlength=n)
            total = total / np.maximum(cnt, 1)
        return total

    count = np.bincount(idx, minlength=n).astype(float)
    has = count > 0
    out = {
        "pulses": count,
        "charge_minutes": np.where(has, per_day("duration"), np.nan),
        "energy": np.where(has, per_day("energy"), np.nan),
        "delta_v": np.where(has, per_day("delta_v", "mean"), np.nan),
        "delta_soc": np.where(has, per_day("delta_soc"), np.nan),
    }
    return out


def estimate_soh(
    pulses: Sequence[ChargingPulse], dates: np.ndarray, reference_days: int = REFERENCE_DAYS
) -> SohSeries:
    """Daily SoH in percent from charging pulses.

    Capacity on a day is the pooled ratio sum(energy) / sum(delta_soc / 100).
    The initial capacity is the mean daily capacity over the first
    ``reference_days`` days that have pulses. Days without a usable capacity
    are filled from their neighbours.
    """
    dates = np.asarray(dates).astype("datetime64[D]")
    feats = daily_pulse_features(pulses, dates)
    soc_frac = feats["delta_soc"] / 100.0
    with np.errstate(invalid="ignore", divide="ignore"):
        capacity = np.where(soc_frac > 0, feats["energy"] / soc_frac, np.nan)
    valid = np.flatnonzero(np.isfinite(capacity) & (capacity > 0))
    if len(valid) == 0:
        raise InsufficientData("no day with charging pulses in the reference window")
    c0 = float(np.mean(capacity[valid[:reference_days]]))
    soh = 100.0 * capacity / c0
    soh = fill_gaps(fill_edges(soh))
    capacity = fill_gaps(fill_edges(capacity))
    return SohSeries(dates, soh, capacity, c0)


def equivalent_cycles(
    pulses: Sequence[ChargingPulse], dates: np.ndarray, nominal_soc_per_cycle: float = 100.0
) -> CycleSeries:
    """Cumulative charge throughput in full-cycle equivalents, sampled daily."""
    dates = np.asarray(dates).astype("datetime64[D]")
    n = len(dates)
    idx = _pulse_days(pulses, dates)
    dsoc = np.array([p.delta_soc for p in pulses], dtype=float)
    # pulses before the first date count toward the starting value
    before = dsoc[idx < 0].sum()
    keep = (idx >= 0) & (idx < n)
    daily = np.bincount(idx[keep], weights=dsoc[keep], minlength=n)
    cycles = (before + np.cumsum(daily)) / nominal_soc_per_cycle
    return CycleSeries(dates, cycles)
