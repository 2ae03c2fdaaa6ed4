import csv
import json
import logging

import numpy as np
import pytest

from sohcast.backtest import read_report_csv
from sohcast.cli import EXIT_CONFIG, EXIT_DATA, main
from sohcast.core import DailySeries
from sohcast.errors import ConfigError, ParseError
from sohcast.ingest import write_household
from sohcast.pipeline import PipelineConfig, config_from_dict, load_config, run_pipeline

TINY = """
schema = 1

[pipeline]
seed = 3
windows = [7]
samples = [14]
rolls = [2]
modes = ["expanding"]
folds = 3
output = "out"

[synth]
n_batteries = 3
years = 0.4

[emd]
ensemble_size = 4

[[grid]]
method = "GB"
n_estimators = 15
max_depth = 2

[[grid]]
method = "RF"
n_estimators = 10
max_depth = 3
"""


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "cfg.toml"
    p.write_text(TINY)
    return p


class TestConfig:
    def test_load(self, tiny):
        cfg = load_config(tiny)
        assert cfg.windows == (7,) and cfg.synth.n_batteries == 3
        assert cfg.output == str(tiny.parent / "out")
        assert [g.method for g in cfg.grid] == ["GB", "RF"]
        assert all(g.seed == 3 for g in cfg.grid) and cfg.emd.seed == 3 and cfg.synth.seed == 3

    @pytest.mark.parametrize(
        "doc",
        [
            {"synth": {}},
            {"schema": 2, "synth": {}},
            {"schema": 1},
            {"schema": 1, "synth": {}, "pipeline": {"modes": ["diagonal"]}},
            {"schema": 1, "synth": {}, "pipeline": {"predictor_set": "all"}},
            {"schema": 1, "synth": {"colour": "red"}},
            {"schema": 1, "synth": {}, "grid": [{"method": "GB", "max_depth": 0}]},
            {"schema": 1, "synth": {}, "pipeline": {"windows": [1]}},
        ],
    )
    def test_invalid(self, doc):
        with pytest.raises(ConfigError):
            config_from_dict(doc)

    def test_unreadable(self, tmp_path):
        (tmp_path / "bad.toml").write_text("schema = = 1")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "bad.toml")


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke")
    (root / "cfg.toml").write_text(TINY)
    assert main(["run", str(root / "cfg.toml")]) == 0
    return root / "out"


class TestRun:
    def test_artifacts(self, smoke):
        for b in ("battery_00", "battery_01", "battery_02"):
            d = smoke / b
            assert (d / "report_s14_w7_r2_expanding.csv").exists()
            assert (d / "chart_s14_w7_r2_expanding.svg").read_text().startswith("<svg")
            metrics = json.loads((d / "metrics_s14_w7_r2_expanding.json").read_text())
            assert {"mae", "rmse", "r2", "evar"} <= set(metrics["model"])
        assert (smoke / "comparison.csv").exists()
        assert not (smoke.parent / "out.partial").exists()

    def test_best_row_is_min_mae(self, smoke):
        with open(smoke / "comparison.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3
        for b in {r["battery"] for r in rows}:
            mine = [r for r in rows if r["battery"] == b]
            best = [r for r in mine if r["best"] == "1"]
            assert len(best) == 1
            assert float(best[0]["mae"]) == min(float(r["mae"]) for r in mine)

    def test_csv_round_trips(self, smoke):
        d = smoke / "battery_01"
        daily = DailySeries.from_csv(d / "daily.csv", "soh")
        daily.to_csv(d.parent / "again.csv")
        assert (d / "daily.csv").read_bytes() == (d.parent / "again.csv").read_bytes()
        rep = read_report_csv(d / "report_s14_w7_r2_expanding.csv")
        assert len(rep["truth"]) == 7
        np.testing.assert_array_equal(rep["ci_hi"] - rep["prediction"], rep["prediction"] - rep["ci_lo"])

    def test_wilcoxon_summary(self, smoke):
        summary = json.loads((smoke / "summary.json").read_text())
        assert summary["wilcoxon"]["reference"] == "battery_00"
        assert set(summary["wilcoxon"]["batteries"]) == {"battery_01", "battery_02"}


def test_protocol_violation_logged_and_run_proceeds(tmp_path, caplog):
    cfg = config_from_dict(
        {
            "schema": 1,
            "synth": {"n_batteries": 1, "years": 0.3},
            "emd": {"ensemble_size": 2},
            "pipeline": {"windows": [7], "samples": [5], "rolls": [1], "folds": 2, "output": str(tmp_path / "o")},
            "grid": [{"method": "GB", "n_estimators": 5, "max_depth": 2}],
        }
    )
    with caplog.at_level(logging.WARNING):
        run_pipeline(cfg)
    assert "violates the sweep protocol" in caplog.text
    assert (tmp_path / "o" / "battery_00" / "report_s5_w7_r1_expanding.csv").exists()


def test_failure_removes_partial_artifacts(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("timestamp,voltage,current,soc,ambient_temp\n2020-01-01T00:00:00Z,1,2\n")
    cfg = PipelineConfig(telemetry=(str(bad),), output=str(tmp_path / "o"))
    with pytest.raises(ParseError) as exc:
        run_pipeline(cfg)
    assert exc.value.stage == "bad:ingest"
    assert not (tmp_path / "o").exists() and not (tmp_path / "o.partial").exists()


def test_household_metrics(tmp_path):
    rng = np.random.default_rng(0)
    start = np.datetime64("2006-12-01", "s").astype(np.int64)
    ts = np.arange(start, np.datetime64("2010-11-01", "s").astype(np.int64), 3 * 3600)
    month = ts.astype("datetime64[s]").astype("datetime64[M]").astype(int)
    gap = 1.1 + 0.4 * np.cos(2 * np.pi * month / 12) + 0.2 * rng.standard_normal(len(ts))
    write_household(tmp_path / "h.txt", ts, {"Global_active_power": gap, "Voltage": 240 + rng.standard_normal(len(ts))})
    cfg = config_from_dict(
        {
            "schema": 1,
            "data": {"household": str(tmp_path / "h.txt")},
            "pipeline": {"windows": [7], "samples": [30], "rolls": [4], "folds": 2, "output": str(tmp_path / "o")},
            "grid": [{"method": "GB", "n_estimators": 50, "max_depth": 2}],
        }
    )
    run_pipeline(cfg)
    m = json.loads((tmp_path / "o" / "household" / "metrics_s30_w7_r4_expanding.json").read_text())
    assert m["model"]["rmse"] > 0 and m["naive"]["rmse"] > 0
    assert m["n_points"] == 8


class TestCli:
    def test_exit_codes(self, tmp_path, tiny):
        (tmp_path / "bad.toml").write_text("[pipeline]\nseed = 1\n")
        assert main(["run", str(tmp_path / "bad.toml")]) == EXIT_CONFIG
        assert main(["ingest", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "x.csv")]) == EXIT_DATA
        (tmp_path / "bad.csv").write_text("timestamp,voltage,current,soc,ambient_temp\nxx,1,1,1,1\n")
        assert main(["ingest", str(tmp_path / "bad.csv"), "--out", str(tmp_path / "x.csv")]) == EXIT_DATA

    def test_subcommand_chain(self, tmp_path):
        t = tmp_path
        assert main(["synth", "--out", str(t / "fleet"), "--batteries", "1", "--years", "0.4", "--seed", "2"]) == 0
        assert main(["ingest", str(t / "fleet" / "battery_00.csv"), "--out", str(t / "daily.csv")]) == 0
        assert main(["decompose", str(t / "daily.csv"), "--out", str(t / "dec.csv"), "--imfs", str(t / "imfs.csv"),
                     "--ensemble-size", "4"]) == 0
        assert "inst_freq_lag1" in DailySeries.from_csv(t / "dec.csv").names
        assert main(["tune", str(t / "dec.csv"), "--out", str(t / "tune.json"), "--window", "7", "--folds", "3",
                     "--method", "GB", "--n-estimators", "10", "--max-depth", "2"]) == 0
        assert json.loads((t / "tune.json").read_text())["best"]["n_estimators"] == 10
        assert main(["backtest", str(t / "dec.csv"), "--model", str(t / "tune.json"), "--window", "7",
                     "--sample", "10", "--roll", "2", "--out", str(t / "bt")]) == 0
        report = t / "bt" / "report_s10_w7_r2_expanding.csv"
        assert main(["report", str(report), "--out", str(t / "chart.svg")]) == 0
        assert (t / "chart.svg").read_text() == (t / "bt" / "chart_s10_w7_r2_expanding.svg").read_text().replace(
            "s10_w7_r2_expanding", "report_s10_w7_r2_expanding"
        )

    def test_seed_override_changes_synthetic_inputs(self, tmp_path, tiny):
        assert main(["run", str(tiny), "--seed", "4", "--output", str(tmp_path / "a")]) == 0
        first = (tmp_path / "a" / "inputs" / "battery_00.csv").read_bytes()
        assert main(["run", str(tiny), "--seed", "5", "--output", str(tmp_path / "b")]) == 0
        assert first != (tmp_path / "b" / "inputs" / "battery_00.csv").read_bytes()


def test_out_of_range_soc_dropped_before_aggregation():
    from sohcast.pipeline import build_daily_features
    from sohcast.synth import FleetSynthSpec, synth_battery

    raw = synth_battery(FleetSynthSpec(years=0.1, seed=1), 0)
    soc = raw.soc.copy()
    soc[::50] = 150.0
    bad = type(raw)(raw.timestamps, raw.voltage, raw.current, soc, raw.ambient_temp)
    daily = build_daily_features(bad)
    assert np.nanmax(daily["soc"]) <= 100.0
