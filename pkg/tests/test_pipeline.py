import json

import numpy as np
import pytest

from flightrts import pipeline
from flightrts.errors import ConditioningError, DivergenceError, FlightRTSError
from flightrts.pipeline import (
    ks_by_component,
    recompute_report,
    run_pipeline,
    write_outputs,
)
from flightrts.sqm import RUN_LABELS


@pytest.fixture(scope="module")
def result(constant_window, constant_flight):
    return run_pipeline(constant_window, constant_flight.scenario.runway)


def test_five_runs_and_one_selection(result):
    assert [r.label for r in result.runs] == list(RUN_LABELS)
    assert all(r.report.ok for r in result.runs)
    assert result.selected.label in RUN_LABELS
    assert not result.fallback


def test_selection_is_closest_to_one(result):
    d = [abs(np.log(r.report.sqm)) for r in result.runs if r.report.complete]
    assert abs(np.log(result.selected.report.sqm)) == min(d)


def test_estimated_schedule_tracks_truth(result, constant_flight):
    # the constant-noise flight's first iteration is well specified, so the
    # interior estimate averages to the true variances within 25%
    var = result.estimate.variances()
    n = var.shape[0]
    names = list(result.estimate.names)
    true_var = np.diagonal(constant_flight.R_true[0])
    ratio = var[n // 5: 4 * n // 5].mean(axis=0) / true_var
    assert ((ratio > 0.75) & (ratio < 1.25)).sum() >= 0.8 * len(names), dict(zip(names, ratio))


def test_single_limit_gives_two_runs(constant_window, constant_flight):
    res = run_pipeline(constant_window, constant_flight.scenario.runway, limits=[0.1])
    assert [r.label for r in res.runs] == ["iter1", "iter2-0.1"]


def test_failed_limit_is_recorded_and_skipped(constant_window, constant_flight, monkeypatch):
    real = pipeline.condition_schedule

    def flaky(est, lim, n):
        if lim == 0.4:
            raise ConditioningError("forced failure", step=3)
        return real(est, lim, n)

    monkeypatch.setattr(pipeline, "condition_schedule", flaky)
    res = run_pipeline(constant_window, constant_flight.scenario.runway)
    bad = res.run("iter2-0.4")
    assert bad.failed and "forced failure" in bad.report.failed
    assert res.selected.label != "iter2-0.4"
    assert len(res.runs) == 5


def test_iteration_one_failure_raises(constant_window, monkeypatch):
    def boom(*a, **k):
        raise DivergenceError("state became non-finite", index=0)

    monkeypatch.setattr(pipeline, "forward_pass", boom)
    with pytest.raises(FlightRTSError, match="iteration 1"):
        run_pipeline(constant_window)


def test_outputs_and_manifest_recompute(result, tmp_path):
    paths = write_outputs(result, tmp_path, flight_id="f1", figures=True)
    for label in RUN_LABELS:
        d = tmp_path / "runs" / label
        for f in ("smoothed.csv", "innovations.csv", "residuals.csv", "schedule.csv", "sqm.json", "manifest.json"):
            assert (d / f).exists(), (label, f)
        rep = recompute_report(d)
        stored = json.loads((d / "sqm.json").read_text())
        assert rep.sqm == pytest.approx(stored["sqm"], rel=1e-12)
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    assert lines[0] == "flight," + ",".join(RUN_LABELS) + ",selected"
    assert lines[1].startswith("f1,") and lines[1].endswith(result.selected.label)
    assert (tmp_path / "selected.txt").read_text().strip() == result.selected.label
    diag = paths["diagnostics"]
    assert (diag / "kde.csv").exists() and (diag / "diagnostics.json").exists()
    assert (diag / "kde.png").exists() and (tmp_path / "estimated_R.png").exists()
    assert list(diag.glob("contour_*.csv")) and list(diag.glob("contour_*.png"))


def test_outputs_are_byte_identical(constant_window, constant_flight, tmp_path):
    for name in ("a", "b"):
        res = run_pipeline(constant_window, constant_flight.scenario.runway, limits=[0.1])
        write_outputs(res, tmp_path / name, figures=False)
    for rel in ("summary.csv", "runs/iter1/smoothed.csv", "runs/iter2-0.1/schedule.csv", "diagnostics/kde.csv",
                "estimated_R.csv"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_ks_by_component(result):
    ks = ks_by_component(result.run("iter1"))
    assert set(ks) == set(result.estimate.names)
    assert all(0 <= v <= 1 for v in ks.values())
