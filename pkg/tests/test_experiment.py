"""Experiment runner and report serialization tests."""

import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from swsbp import experiment
from swsbp.errors import DegeneracyError, SwsbpError, ValidationError
from swsbp.experiment import (
    CSV_HEADER,
    METHOD_BASELINE,
    METHOD_NAIVE,
    METHOD_SWSBP1,
    METHOD_SWSBP2,
    METHODS,
    ExperimentReport,
    ExperimentRow,
    emit_report,
    l1_error,
    load_report,
    report_to_csv,
    run_experiment,
)
from swsbp.scenario import KIND_RANDOM_HMM, ScenarioConfig
from swsbp.window import WindowVariant


def small_config(**overrides):
    settings = dict(
        kind=KIND_RANDOM_HMM,
        population=200,
        horizon=6,
        window=3,
        seed=0,
        num_states=4,
    )
    settings.update(overrides)
    return ScenarioConfig(**settings)


def rows_without_timing(report):
    return [
        (row.trial, row.t, row.method, row.l1_vs_baseline, row.l1_vs_truth,
         row.converged, row.sweeps)
        for row in report.rows
    ]


class TestL1Error:
    def test_identical_is_zero(self):
        assert l1_error([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_disjoint_point_masses(self):
        assert l1_error([1.0, 0.0], [0.0, 1.0]) == 2.0

    def test_small_shift(self):
        assert_allclose(l1_error([0.6, 0.4], [0.5, 0.5]), 0.2, atol=1e-15)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            l1_error([0.5, 0.5], [0.2, 0.3, 0.5])


class TestRunExperiment:
    def test_row_count_and_order(self):
        config = small_config()
        report = run_experiment(config, trials=2)
        steps = config.horizon - config.window
        assert len(report.rows) == 2 * steps * len(METHODS)
        keys = [(row.trial, row.t, row.method) for row in report.rows]
        assert keys == sorted(keys)
        assert {row.t for row in report.rows} == set(
            range(config.window + 1, config.horizon + 1)
        )
        assert {row.method for row in report.rows} == set(METHODS)

    def test_baseline_rows_have_zero_self_distance(self):
        report = run_experiment(small_config(), trials=1)
        base_rows = [r for r in report.rows if r.method == METHOD_BASELINE]
        assert base_rows
        assert all(row.l1_vs_baseline == 0.0 for row in base_rows)

    def test_errors_within_distribution_bounds(self):
        report = run_experiment(small_config(), trials=2)
        for row in report.rows:
            assert 0.0 <= row.l1_vs_baseline <= 2.0
            assert 0.0 <= row.l1_vs_truth <= 2.0

    def test_all_steps_converged(self):
        report = run_experiment(small_config(), trials=1)
        assert all(row.converged for row in report.rows)
        assert all(row.sweeps >= 1 for row in report.rows)

    def test_replay_is_deterministic_apart_from_timing(self):
        first = run_experiment(small_config(), trials=2)
        second = run_experiment(small_config(), trials=2)
        assert rows_without_timing(first) == rows_without_timing(second)

    def test_method_subset_still_scores_against_baseline(self):
        report = run_experiment(small_config(), methods=[METHOD_NAIVE], trials=1)
        assert {row.method for row in report.rows} == {METHOD_NAIVE}
        assert all(math.isfinite(row.l1_vs_baseline) for row in report.rows)

    def test_unknown_method_rejected(self):
        with pytest.raises(ValidationError, match="unknown methods"):
            run_experiment(small_config(), methods=["bogus"])

    def test_empty_methods_rejected(self):
        with pytest.raises(ValidationError):
            run_experiment(small_config(), methods=[])

    def test_nonpositive_trials_rejected(self):
        with pytest.raises(ValidationError):
            run_experiment(small_config(), trials=0)

    def test_summary_covers_every_method_and_step(self):
        config = small_config()
        report = run_experiment(config, trials=2)
        steps = config.horizon - config.window
        assert len(report.summary) == steps * len(METHODS)
        base = [s for s in report.summary if s["method"] == METHOD_BASELINE]
        assert all(entry["mean_l1_vs_baseline"] == 0.0 for entry in base)
        assert all(entry["trials"] == 2 for entry in report.summary)

    def test_metadata_records_run_settings(self):
        config = small_config()
        report = run_experiment(config, methods=[METHOD_SWSBP2], trials=1)
        assert report.metadata["config"]["population"] == config.population
        assert report.metadata["config"]["kind"] == KIND_RANDOM_HMM
        assert report.metadata["methods"] == [METHOD_SWSBP2]
        assert report.metadata["backend"] in ("python", "compiled")
        assert report.metadata["errors"] == []

    def test_oracle_check_certifies_final_solve(self):
        config = small_config(num_states=2, horizon=4, window=2, population=50)
        report = run_experiment(config, trials=1, oracle_check=True)
        assert report.metadata["oracle_check"]["max_node_gap"] <= 1e-6


class TestRecovery:
    def test_midstream_failure_marks_remaining_steps(self, monkeypatch):
        config = small_config()
        real_advance = experiment.advance

        def flaky(state, y, tolerance, max_sweeps):
            # fail the second naive advance and everything after it
            if (
                state.variant is WindowVariant.NAIVE
                and state.time >= config.window + 1
            ):
                raise DegeneracyError("injected failure")
            return real_advance(state, y, tolerance=tolerance, max_sweeps=max_sweeps)

        monkeypatch.setattr(experiment, "advance", flaky)
        report = run_experiment(config, trials=1)
        naive = [r for r in report.rows if r.method == METHOD_NAIVE]
        assert math.isfinite(naive[0].l1_vs_truth)
        for row in naive[1:]:
            assert math.isnan(row.l1_vs_baseline)
            assert math.isnan(row.l1_vs_truth)
            assert row.step_seconds == 0.0
            assert not row.converged
            assert row.sweeps == 0
        others = [r for r in report.rows if r.method != METHOD_NAIVE]
        assert all(math.isfinite(r.l1_vs_truth) for r in others)
        assert report.metadata["errors"] == [
            {"trial": 0, "method": METHOD_NAIVE, "message": "injected failure"}
        ]

    def test_init_failure_blanks_the_whole_stream(self, monkeypatch):
        config = small_config()
        real_init = experiment.init_window

        def flaky(model, variant, size, observations, tolerance, max_sweeps):
            if WindowVariant(variant) is WindowVariant.CONSTRAINED:
                raise DegeneracyError("injected init failure")
            return real_init(
                model,
                variant,
                size,
                observations,
                tolerance=tolerance,
                max_sweeps=max_sweeps,
            )

        monkeypatch.setattr(experiment, "init_window", flaky)
        report = run_experiment(config, trials=1)
        pinned = [r for r in report.rows if r.method == METHOD_SWSBP1]
        assert len(pinned) == config.horizon - config.window
        assert all(math.isnan(row.l1_vs_truth) for row in pinned)
        assert [e["method"] for e in report.metadata["errors"]] == [METHOD_SWSBP1]


class TestCsv:
    def test_header_is_exact(self):
        assert CSV_HEADER == (
            "trial,t,method,l1_vs_baseline,l1_vs_truth,"
            "step_seconds,converged,sweeps"
        )

    def test_empty_report_is_header_only(self):
        empty = ExperimentReport(rows=(), metadata={}, summary=())
        assert report_to_csv(empty) == CSV_HEADER + "\n"

    def test_single_row_layout(self):
        row = ExperimentRow(0, 4, "naive", 0.125, 0.25, 0.0, True, 7)
        report = ExperimentReport(rows=(row,), metadata={}, summary=())
        assert report_to_csv(report) == (
            CSV_HEADER + "\n" + "0,4,naive,0.125,0.25,0,true,7\n"
        )

    def test_floats_round_trip_through_text(self):
        value = 1.0 / 3.0
        row = ExperimentRow(0, 4, "naive", value, value, value, False, 3)
        report = ExperimentReport(rows=(row,), metadata={}, summary=())
        line = report_to_csv(report).splitlines()[1]
        fields = line.split(",")
        assert fields[3] == "0.33333333333333331"
        assert float(fields[3]) == value
        assert fields[6] == "false"

    def test_nan_is_spelled_out(self):
        row = ExperimentRow(0, 4, "naive", math.nan, math.nan, 0.0, False, 0)
        report = ExperimentReport(rows=(row,), metadata={}, summary=())
        line = report_to_csv(report).splitlines()[1]
        assert line == "0,4,naive,nan,nan,0,false,0"

    def test_emit_writes_the_same_text(self, tmp_path):
        report = run_experiment(small_config(), trials=1)
        target = tmp_path / "rows.csv"
        emit_report(report, "csv", target)
        assert target.read_text(encoding="utf-8") == report_to_csv(report)


class TestJson:
    def test_round_trip_preserves_rows_and_metadata(self, tmp_path):
        report = run_experiment(small_config(), trials=1)
        target = tmp_path / "report.json"
        emit_report(report, "json", target)
        loaded = load_report(target)
        assert report_to_csv(loaded) == report_to_csv(report)
        assert loaded.metadata == report.metadata
        assert list(loaded.summary) == list(report.summary)

    def test_nan_rows_survive_round_trip(self, tmp_path):
        row = ExperimentRow(0, 4, "naive", math.nan, math.nan, 0.0, False, 0)
        report = ExperimentReport(rows=(row,), metadata={"errors": []}, summary=())
        target = tmp_path / "report.json"
        emit_report(report, "json", target)
        loaded = load_report(target)
        assert math.isnan(loaded.rows[0].l1_vs_baseline)

    def test_unknown_format_rejected(self, tmp_path):
        report = ExperimentReport(rows=(), metadata={}, summary=())
        with pytest.raises(ValidationError, match="format"):
            emit_report(report, "xml", tmp_path / "report.xml")

    def test_write_failure_names_the_path(self, tmp_path):
        report = ExperimentReport(rows=(), metadata={}, summary=())
        target = tmp_path / "missing" / "report.json"
        with pytest.raises(SwsbpError, match="missing"):
            emit_report(report, "json", target)

    def test_load_failure_names_the_path(self, tmp_path):
        with pytest.raises(SwsbpError, match="nowhere"):
            load_report(tmp_path / "nowhere.json")
