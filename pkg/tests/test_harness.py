from __future__ import annotations

import json

import numpy as np
import pytest

from sepspike import harness
from sepspike.errors import ConfigError
from sepspike.harness import AggregateReport, ExperimentConfig, MetricSummary, Rule
from sepspike.spectra import SeparableModel, spiked_to


def test_rule_statistics():
    v = np.arange(1.0, 101.0)
    assert Rule("median", 50.5).evaluate(v) == (50.5, True)
    assert Rule("max", 99.0).evaluate(v) == (100.0, False)
    assert Rule("min", 1.0, lower=True).evaluate(v) == (1.0, True)
    stat, ok = Rule("q95", 96.0).evaluate(v)
    assert stat == pytest.approx(np.quantile(v, 0.95)) and ok
    with pytest.raises(ValueError):
        Rule("mode", 1.0).evaluate(v)


def test_metric_summary_and_recompute():
    v = np.linspace(0, 1, 101)
    m = MetricSummary.from_raw("x", v, Rule("mean", 0.4))
    assert m.mean == pytest.approx(0.5)
    assert m.se == pytest.approx(np.std(v, ddof=1) / np.sqrt(101))
    assert m.passed is False
    rep = AggregateReport("sticking", [m], {"x": v})
    assert not rep.passed
    fixed = harness.recompute(rep, {"x": Rule("mean", 0.6)})
    assert fixed.passed and fixed.metric("x").observed == pytest.approx(0.5)


def test_report_files_use_lf_and_header(tmp_path):
    v = np.array([0.5, 1.5])
    rep = AggregateReport("prial", [MetricSummary.from_raw("loss", v)], {"loss": v},
                          tables={"curve": [{"n": 100, "prial": 1.0}]}, checks={"ok": True})
    paths = rep.write(str(tmp_path))
    data = (tmp_path / "loss.csv").read_bytes()
    assert data == b"rep,value\n0,0.5\n1,1.5\n"
    assert (tmp_path / "curve.csv").read_text().splitlines()[0] == "n,prial"
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["passed"] is True and report["kind"] == "prial"
    assert len(paths) == 3


def test_config_rejects_unknown_kind_knob_and_multiplier():
    with pytest.raises(ConfigError):
        ExperimentConfig("stickng")
    with pytest.raises(ConfigError):
        ExperimentConfig("sticking", knobs={"imax": 3})
    with pytest.raises(ConfigError):
        ExperimentConfig("sticking", multipliers={"stick": 1.0})
    with pytest.raises(ConfigError):
        ExperimentConfig("sticking", reps=0)
    with pytest.raises(ConfigError):
        ExperimentConfig("sticking").need_model()


def test_sub_seed_and_map_reps_are_deterministic():
    assert harness.sub_seed(1, 2, 3) == harness.sub_seed(1, 2, 3)
    assert harness.sub_seed(1, 2, 3) != harness.sub_seed(1, 2, 4)
    assert harness.map_reps(lambda i: i * i, 5, threads=3) == [0, 1, 4, 9, 16]


def test_outlier_location_is_reproducible_across_thread_counts():
    model = spiked_to(SeparableModel.null(200, 200), [4.0])
    a = harness.run(ExperimentConfig("outlier_location", model, reps=10, seed=4, threads=1))
    b = harness.run(ExperimentConfig("outlier_location", model, reps=10, seed=4, threads=3))
    np.testing.assert_array_equal(a.raw["dev_a1"], b.raw["dev_a1"])
    assert a.passed


def test_outlier_location_fails_with_zero_multiplier():
    model = spiked_to(SeparableModel.null(200, 200), [4.0])
    rep = harness.run(ExperimentConfig("outlier_location", model, reps=10, multipliers={"location": 0.0}))
    assert not rep.passed


def test_sticking_small():
    model = spiked_to(SeparableModel.null(150, 150), [4.0])
    rep = harness.run(ExperimentConfig("sticking", model, reps=10, knobs={"i_max": 5}))
    assert rep.metric("interlacing_fraction").observed == 1.0
    assert rep.params["alpha_plus"] == pytest.approx(2.0)
    assert rep.passed


def test_overlap_two_sided():
    model = spiked_to(SeparableModel.null(300, 300), [4.0], [3.0])
    rep = harness.run(ExperimentConfig("overlap", model, reps=20))
    pred = rep.params["predicted"]
    assert pred["a1"] == pytest.approx(2 / 3, abs=1e-9)
    assert pred["b1"] == pytest.approx(0.5, abs=1e-9)
    assert rep.metric("overlap_a1").mean == pytest.approx(pred["a1"], abs=0.06)
    assert rep.metric("overlap_b1").mean == pytest.approx(pred["b1"], abs=0.08)
    assert any(name.startswith("leak_") for name in rep.raw)


def test_delocalization_with_weak_spike():
    model = spiked_to(SeparableModel.null(200, 200), [1.9])
    rep = harness.run(ExperimentConfig("delocalization", model, reps=20, knobs={"weak_index": 1}))
    assert rep.metric("scaled_overlap").passed
    # a near-critical direction concentrates on the edge eigenvector far more than a generic one
    assert rep.metric("weak_edge_overlap").mean > 3 * rep.metric("generic_edge_overlap").mean


def test_counts_misestimation_curve_shape():
    rep = harness.run(ExperimentConfig(
        "counts_misestimation", reps=60, knobs={"calib_N": 200, "xs": [1.0, 2.0, 5.0]},
    ))
    rates = [row["misestimation"] for row in rep.tables["curve"]]
    assert rates[0] > 0.9
    assert rates[-1] <= 0.05
    assert rep.checks["decreasing_within_noise"]
    assert rep.params["statistic"] == "q_b"


def test_counts_misestimation_rejects_unknown_statistic():
    with pytest.raises(ConfigError):
        harness.run(ExperimentConfig("counts_misestimation", reps=2, knobs={"calib_N": 100, "statistic": "qq"}))


def test_figure_case_truths():
    cases = harness.figure1_cases()
    assert [c["truth"] for c in cases] == [[2, 1, 1], [2, 2, 0]]
    assert harness.figure2_cases([3.0])[0]["sigma_b"] == [5.0, 3.0]


def test_adaptive_table_small():
    rep = harness.run(ExperimentConfig("adaptive_table", reps=10, knobs={"dims": [[100, 200]], "sigmas": [10.0]}))
    row = rep.tables["table"][0]
    assert row["reference"] == 9.83
    assert row["mean"] == pytest.approx(10.0, abs=0.6)


def test_prial_oracle_mode_is_hundred_percent():
    rep = harness.run(ExperimentConfig("prial", reps=5, knobs={"sizes": [60], "oracle_mode": True}))
    assert rep.tables["curve"][0]["prial"] == pytest.approx(100.0)


def test_prial_positive():
    rep = harness.run(ExperimentConfig("prial", reps=20, knobs={"sizes": [80, 120]}))
    assert all(r["prial"] > 0 for r in rep.tables["curve"])


def test_local_law_small():
    model = SeparableModel.null(150, 150)
    rep = harness.run(ExperimentConfig(
        "local_law", model, reps=10, knobs={"directions": 3, "outside_energies": [6.0]},
    ))
    assert rep.checks["trace_identities"]
    assert rep.passed
    assert "aniso_error" in rep.raw and "outside_error" in rep.raw
