import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import DAY0, make_raw
from sohcast.core import (
    DailySeries,
    RawTelemetry,
    aggregate_daily,
    calendar_range,
    linear_trend_per_year,
    quartile_stats,
)
from sohcast.errors import EmptyInput, InsufficientData, NoSuchChannel, ShapeError, UnsortedInput

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


class TestAggregateDaily:
    def test_two_days_of_constant_voltage(self):
        raw = make_raw(np.arange(2880), 48.0, 10.0, 50.0)
        daily = aggregate_daily(raw)
        assert len(daily) == 2
        np.testing.assert_array_equal(daily["voltage"], [48.0, 48.0])
        assert daily.dates[0] == np.datetime64("2020-03-01")

    def test_missing_middle_day_is_nan(self):
        minutes = np.r_[np.arange(0, 60), np.arange(2880, 2940)]
        daily = aggregate_daily(make_raw(minutes, 48.0, 1.0, 50.0))
        assert len(daily) == 3
        assert np.isnan(daily["voltage"][1])
        assert daily.missing_count() == 4

    def test_soc_ramp_mean_matches_direct_sum(self):
        m = np.arange(1440)
        soc = 100.0 * m / 1439
        daily = aggregate_daily(make_raw(m, 48.0, 1.0, soc))
        assert daily["soc"][0] == pytest.approx(sum(soc) / len(soc), abs=1e-12)
        assert daily["soc"][0] == pytest.approx(50.0)

    def test_reducers(self):
        m = np.arange(4)
        raw = make_raw(m, [1.0, 4.0, 2.0, 3.0], 1.0, 50.0)
        for name, want in [("sum", 10.0), ("last", 3.0), ("max", 4.0), ("min", 1.0), ("mean", 2.5)]:
            assert aggregate_daily(raw, {"voltage": name})["voltage"][0] == want

    def test_utc_day_boundary(self):
        # 23:59 and 00:00 fall on different days
        raw = make_raw([1439, 1440], [1.0, 3.0], 0.0, 0.0)
        np.testing.assert_array_equal(aggregate_daily(raw)["voltage"], [1.0, 3.0])

    def test_errors(self):
        with pytest.raises(EmptyInput):
            aggregate_daily(make_raw([], 1.0, 1.0, 1.0))
        with pytest.raises(UnsortedInput):
            aggregate_daily(make_raw([5, 1], 1.0, 1.0, 1.0))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 100), min_size=2, max_size=40), st.randoms(use_true_random=False))
    def test_same_day_shuffle_invariance(self, values, rnd):
        m = np.arange(len(values))
        shuffled = list(values)
        rnd.shuffle(shuffled)
        a = aggregate_daily(make_raw(m, values, 0.0, 0.0))["voltage"][0]
        b = aggregate_daily(make_raw(m, shuffled, 0.0, 0.0))["voltage"][0]
        assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


class TestRawTelemetry:
    def test_sorted_unique_keeps_last(self):
        raw = RawTelemetry([3.0, 1.0, 3.0], [1.0, 2.0, 3.0], [0, 0, 0], [0, 0, 0], [0, 0, 0])
        out = raw.sorted_unique()
        np.testing.assert_array_equal(out.timestamps, [1.0, 3.0])
        np.testing.assert_array_equal(out.voltage, [2.0, 3.0])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            RawTelemetry([1.0, 2.0], [1.0], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0])

    def test_filter_ambient(self):
        raw = make_raw(np.arange(3), 1.0, 1.0, 1.0, temp=[10.0, 25.0, 40.0])
        assert len(raw.filter_ambient(20, 30)) == 1

    def test_concatenate_and_column(self):
        a = make_raw([0, 1], 1.0, 1.0, 1.0)
        b = make_raw([2], 2.0, 1.0, 1.0)
        both = RawTelemetry.concatenate([a, b])
        np.testing.assert_array_equal(both.column("voltage"), [1.0, 1.0, 2.0])
        with pytest.raises(NoSuchChannel):
            both.column("nope")


class TestDailySeries:
    def test_contiguity_enforced(self):
        with pytest.raises(ShapeError):
            DailySeries(np.array(["2020-01-01", "2020-01-03"], dtype="datetime64[D]"), {"a": [1.0, 2.0]})

    def test_unknown_channel(self):
        s = DailySeries(calendar_range("2020-01-01", "2020-01-02"), {"a": [1.0, 2.0]})
        with pytest.raises(NoSuchChannel):
            s["b"]
        with pytest.raises(NoSuchChannel):
            s.with_target("b")

    def test_csv_round_trip(self, tmp_path):
        vals = np.array([0.1, np.nan, 1e-17 + 1 / 3])
        s = DailySeries(calendar_range("2021-12-30", "2022-01-01"), {"a": vals, "b": [1.0, 2.0, 3.0]}, "b")
        s.to_csv(tmp_path / "s.csv")
        back = DailySeries.from_csv(tmp_path / "s.csv", "b")
        np.testing.assert_array_equal(back.dates, s.dates)
        np.testing.assert_array_equal(back["a"], vals)
        assert back.names == ["a", "b"]

    def test_monthly_csv_round_trip(self, tmp_path):
        dates = np.arange(np.datetime64("2007-01"), np.datetime64("2007-04"))
        s = DailySeries(dates, {"x": [1.0, 2.0, 3.0]})
        s.to_csv(tmp_path / "m.csv")
        assert DailySeries.from_csv(tmp_path / "m.csv").dates.dtype == np.dtype("datetime64[M]")

    def test_slice_select(self):
        s = DailySeries(calendar_range("2020-01-01", "2020-01-04"), {"a": np.arange(4.0), "b": np.ones(4)}, "a")
        assert s.slice(1, 3)["a"].tolist() == [1.0, 2.0]
        assert s.select(["b"]).target is None


class TestQuartiles:
    def test_hand_computed_example(self):
        st_ = quartile_stats(np.arange(1, 13))
        assert (st_.q1, st_.q3, st_.iqr) == (3.75, 9.25, 5.5)
        assert (st_.lower_fence, st_.upper_fence) == (-4.5, 17.5)

    def test_constant(self):
        st_ = quartile_stats([7.0] * 9)
        assert st_.iqr == 0 and st_.lower_fence == st_.upper_fence == 7.0

    def test_spike_is_outside(self):
        st_ = quartile_stats([0, 0, 0, 100])
        # R-7: q1 = 0, q3 = 25, upper fence 62.5
        assert st_.upper_fence == 62.5
        assert not st_.inside(np.array([100.0]))[0]

    def test_too_few(self):
        with pytest.raises(InsufficientData):
            quartile_stats([1.0, 2.0, np.nan, 3.0])

    @settings(max_examples=100, deadline=None)
    @given(arrays(float, st.integers(4, 50), elements=finite), st.floats(-1e3, 1e3))
    def test_translation_equivariance(self, x, c):
        a, b = quartile_stats(x), quartile_stats(x + c)
        tol = 1e-9 * (1 + np.abs(x).max() + abs(c))
        assert b.lower_fence == pytest.approx(a.lower_fence + c, abs=tol)
        assert b.upper_fence == pytest.approx(a.upper_fence + c, abs=tol)

    @settings(max_examples=100, deadline=None)
    @given(arrays(float, st.integers(4, 50), elements=finite), st.floats(1e-3, 1e3))
    def test_scale_equivariance(self, x, k):
        a, b = quartile_stats(x), quartile_stats(k * x)
        tol = 1e-9 * k * (1 + np.abs(x).max())
        assert b.lower_fence == pytest.approx(k * a.lower_fence, abs=tol)
        assert b.upper_fence == pytest.approx(k * a.upper_fence, abs=tol)


def test_linear_trend_per_year():
    dates = calendar_range("2020-01-01", "2022-12-31")
    t = np.arange(len(dates))
    assert linear_trend_per_year(dates, 100 - 2.2 * t / 365.25) == pytest.approx(-2.2)


def test_make_raw_epoch():
    assert DAY0 % 86400 == 0
