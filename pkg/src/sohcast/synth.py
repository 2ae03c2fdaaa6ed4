"""Seeded synthetic forklift fleet telemetry.

Each battery charges in short pulses (Poisson count per day) whose energy per
SOC point tracks a linearly fading capacity, with small noise, occasional
recovery bumps and optional fault bursts. Outside pulses the pack is sampled
at a coarse idle interval while it discharges.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import SECONDS_PER_DAY, RawTelemetry


@dataclass(frozen=True)
class FaultBurst:
    start_day: int
    n_days: int = 5
    magnitude: float = 0.3  # peak-to-peak day-to-day swing, as a fraction


@dataclass(frozen=True)
class FleetSynthSpec:
    n_batteries: int = 3
    years: float = 3.0
    degradation_pp_per_year: float = 2.2
    rate_spread: float = 0.15  # relative spread of the rate across batteries after the first
    temp_mean: float = 27.0
    temp_amplitude: float = 5.0
    pulse_rate: float = 2.0  # per day
    delta_soc_mean: float = 41.0
    delta_soc_std: float = 6.0
    capacity_noise_pct: float = 0.3
    recovery_rate: float = 0.01  # bumps per day
    recovery_pp: float = 0.5
    faults: tuple[FaultBurst, ...] = ()
    nominal_wh: float = 20000.0
    idle_minutes: int = 60
    start: str = "2018-01-01"
    seed: int = 0
    fault_batteries: tuple[int, ...] = field(default=(0,))

    def __post_init__(self):
        if self.degradation_pp_per_year <= 0:
            raise ValueError("degradation rate must be > 0")
        if self.years <= 0:
            raise ValueError("years must be > 0")
        if self.n_batteries < 1:
            raise ValueError("n_batteries must be >= 1")


def _bumps(n_days: int, rate: float, size: float, rng) -> np.ndarray:
    starts = rng.random(n_days) < rate
    kernel = size * np.exp(-np.arange(n_days) / 7.0)
    return np.convolve(starts.astype(float), kernel)[:n_days]


def _fault_factor(n_days: int, faults, rng) -> np.ndarray:
    f = np.ones(n_days)
    for fb in faults:
        days = np.arange(fb.start_day, min(n_days, fb.start_day + fb.n_days))
        sign = np.where((days - fb.start_day) % 2 == 0, 1.0, -1.0)
        f[days] = 1.0 + sign * fb.magnitude / 2.0
    return f


def synth_battery(spec: FleetSynthSpec, index: int) -> RawTelemetry:
    rng = np.random.default_rng([spec.seed, index])
    n_days = int(round(spec.years * 365.25))
    rate = spec.degradation_pp_per_year
    if index > 0 and spec.rate_spread > 0:
        rate *= max(0.2, 1.0 + spec.rate_spread * rng.standard_normal())
    day0 = np.datetime64(spec.start, "D").astype(np.int64) * SECONDS_PER_DAY
    years = np.arange(n_days) / 365.25
    health = 1.0 - rate * years / 100.0 + _bumps(n_days, spec.recovery_rate, spec.recovery_pp, rng) / 100.0
    faults = spec.faults if index in spec.fault_batteries else ()
    health = health * _fault_factor(n_days, faults, rng)
    doy = (np.datetime64(spec.start, "D") + np.arange(n_days) - np.datetime64(spec.start[:4] + "-01-01", "D")).astype(int)
    temp = spec.temp_mean + spec.temp_amplitude * np.sin(2 * np.pi * (doy - 105) / 365.25)

    ts, volt, cur, soc, amb = [], [], [], [], []
    last_t, last_soc = float(day0), 80.0
    for day in range(n_days):
        base = day0 + day * SECONDS_PER_DAY
        n_p = rng.poisson(spec.pulse_rate)
        events = []
        seg = (1380 - 60) / max(n_p, 1)
        for k in range(n_p):
            dur = int(rng.integers(8, 29))
            start_min = 60 + k * seg + rng.random() * max(seg - dur - 5, 1)
            dsoc = float(np.clip(rng.normal(spec.delta_soc_mean, spec.delta_soc_std),
                                 spec.delta_soc_mean - 26, spec.delta_soc_mean + 26))
            events.append((int(start_min), dur, dsoc))
        # idle samples on a fixed grid, skipping minutes occupied by pulses
        grid = np.arange(0, 1440, spec.idle_minutes)
        busy = np.zeros(1440, dtype=bool)
        for sm, dur, _ in events:
            busy[max(0, sm - 2) : sm + dur + 3] = True
        idle = grid[~busy[grid]]
        day_ts, day_soc, day_v, day_i = [], [], [], []
        for sm, dur, dsoc in events:
            s0 = float(rng.uniform(5.0, 100.0 - dsoc))
            if s0 >= last_soc - 1.0:
                s0 = max(1.0, last_soc - 5.0)
                dsoc = min(dsoc, 100.0 - s0)
            t0 = base + sm * 60.0
            # discharge between the previous sample and this pulse
            pre = idle[(idle * 60.0 + base > last_t) & (idle < sm)]
            if len(pre):
                tt = base + pre * 60.0
                frac = (tt - last_t) / (t0 - last_t)
                day_ts += tt.tolist()
                day_soc += (last_soc + frac * (s0 - last_soc)).tolist()
                day_v += (77.0 + 0.05 * (last_soc + frac * (s0 - last_soc))).tolist()
                day_i += [-40.0] * len(pre)
            idle = idle[idle > sm + dur]
            energy = spec.nominal_wh * health[day] * (1 + spec.capacity_noise_pct / 100 * rng.standard_normal()) * dsoc / 100
            power = energy / (dur / 60.0)
            k = np.arange(dur + 1)
            v = 76.0 + 0.08 * s0 + 3.0 * k / dur
            day_ts += (t0 + 60.0 * k).tolist()
            day_soc += (s0 + dsoc * k / dur).tolist()
            day_v += v.tolist()
            day_i += (power / v).tolist()
            last_t, last_soc = t0 + 60.0 * dur, s0 + dsoc
        if len(idle):
            tt = base + idle * 60.0
            tt = tt[tt > last_t]
            # slow self-discharge when idle for the rest of the day
            s = last_soc - 0.2 * (tt - last_t) / 3600.0
            s = np.maximum(s, 1.0)
            day_ts += tt.tolist()
            day_soc += s.tolist()
            day_v += (77.0 + 0.05 * s).tolist()
            day_i += [-5.0] * len(tt)
            if len(tt):
                last_t, last_soc = float(tt[-1]), float(s[-1])
        ts += day_ts
        soc += day_soc
        volt += day_v
        cur += day_i
        amb += (temp[day] + 0.8 * rng.standard_normal(len(day_ts))).tolist()
    return RawTelemetry(np.array(ts), np.array(volt), np.array(cur), np.array(soc), np.array(amb))


def synth_fleet(spec: FleetSynthSpec) -> list[RawTelemetry]:
    return [synth_battery(spec, i) for i in range(spec.n_batteries)]
