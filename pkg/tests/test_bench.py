"""Benchmark harness: rows, failure recording, report serialization."""

import math

import numpy as np
import pytest

from facereg import bench
from facereg.bench import (BenchReport, BenchRow, report_emit, report_parse,
                           run_comparison)
from facereg.cli import perturbation_transform
from facereg.phantom import PhantomSpec


@pytest.fixture(scope="module")
def report():
    spec = PhantomSpec(noise_sigma=0.5)
    perturb = perturbation_transform(15.0, 25.0, 42)
    return run_comparison(spec, perturb, methods=("ours", "harris"), trials=1)


class TestRunComparison:
    def test_ours_row(self, report):
        row = report.row("ours")
        assert row.src_features == 21
        assert row.tgt_features == 21
        assert row.coarse_rmse_mm < 3.0
        assert row.fine_rmse_mm < 1.1
        assert row.converged
        assert not row.failed
        assert row.t_total_s == row.t_coarse_s + row.t_fine_s
        assert len(row.fine_history) > 0

    def test_failure_recorded_not_raised(self, report):
        # Harris finds no usable keypoints on the smooth CT surface; the
        # report row carries the error instead of the benchmark blowing up
        row = report.row("harris")
        assert row.failed
        assert row.error != ""
        assert math.isnan(row.fine_rmse_mm)
        assert not row.converged

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            run_comparison(PhantomSpec(), perturbation_transform(5, 5, 1),
                           methods=("nope",))

    def test_bad_trials(self):
        with pytest.raises(ValueError):
            run_comparison(PhantomSpec(), perturbation_transform(5, 5, 1),
                           trials=0)

    def test_row_lookup(self, report):
        with pytest.raises(KeyError):
            report.row("sift")


class TestReportSerialization:
    def test_csv_round_trip(self, report):
        text = report_emit(report, "csv")
        assert text.splitlines()[0].split(",") == list(bench.CSV_COLUMNS)
        back = report_parse(text, "csv")
        for orig, parsed in zip(report.rows, back.rows):
            assert parsed.method == orig.method
            assert parsed.src_features == orig.src_features
            assert parsed.error == orig.error
            if not orig.failed:
                assert np.isclose(parsed.fine_rmse_mm, orig.fine_rmse_mm,
                                  rtol=1e-8)

    def test_json_round_trip(self, report):
        text = report_emit(report, "json")
        back = report_parse(text, "json")
        assert back.trials == report.trials
        for orig, parsed in zip(report.rows, back.rows):
            assert parsed.method == orig.method
            if not orig.failed:
                assert parsed.fine_rmse_mm == orig.fine_rmse_mm

    def test_markdown_contains_table(self, report):
        text = report_emit(report, "markdown")
        lines = text.splitlines()
        assert lines[0].startswith("| method |")
        assert any("| ours |" in ln for ln in lines)

    def test_unknown_format(self, report):
        with pytest.raises(ValueError):
            report_emit(report, "xml")
        with pytest.raises(ValueError):
            report_parse("", "xml")


class TestDeterminism:
    def test_rmse_outputs_identical_across_runs(self, report):
        spec = PhantomSpec(noise_sigma=0.5)
        perturb = perturbation_transform(15.0, 25.0, 42)
        again = run_comparison(spec, perturb, methods=("ours",), trials=1)
        a = report.row("ours")
        b = again.row("ours")
        assert a.coarse_rmse_mm == b.coarse_rmse_mm
        assert a.fine_rmse_mm == b.fine_rmse_mm
        assert a.fine_history == b.fine_history
