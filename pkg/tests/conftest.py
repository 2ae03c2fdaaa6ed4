import numpy as np
import pytest

from sohcast.core import RawTelemetry

DAY0 = np.datetime64("2020-03-01", "s").astype(np.int64)


def make_raw(minutes, voltage, current, soc, temp=25.0, day0=DAY0) -> RawTelemetry:
    """Telemetry on a minute grid counted from ``day0``; scalars broadcast."""
    minutes = np.asarray(minutes, dtype=float)
    n = len(minutes)

    def col(v):
        return np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()

    return RawTelemetry(day0 + 60.0 * minutes, col(voltage), col(current), col(soc), col(temp))


def charge_segment(start_min, duration_min, soc0, soc1, volts=48.0, amps=50.0):
    """One linear SOC ramp sampled every minute (duration + 1 samples)."""
    k = np.arange(duration_min + 1)
    return (
        start_min + k,
        np.full(len(k), volts),
        np.full(len(k), amps),
        soc0 + (soc1 - soc0) * k / duration_min,
    )


def day_of_pulses(day, pulses, idle_soc=None):
    """Raw samples for ``day`` with the given (start_min, duration, dsoc, volts, amps) pulses."""
    ts, v, c, s = [], [], [], []
    soc = 10.0
    for start, dur, dsoc, volts, amps in pulses:
        m, vv, cc, ss = charge_segment(day * 1440 + start, dur, soc, soc + dsoc, volts, amps)
        ts.append(m); v.append(vv); c.append(cc); s.append(ss)
        # a discharge sample long after the pulse resets the SOC
        ts.append([day * 1440 + start + dur + 30]); v.append([47.0]); c.append([-10.0]); s.append([soc])
    return np.concatenate(ts), np.concatenate(v), np.concatenate(c), np.concatenate(s)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
