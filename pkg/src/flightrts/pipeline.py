"""Two-iteration smoothing: constant noise first, estimated noise schedules second."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .diagnostics import (
    DEFAULT_PAIRS,
    StandardizedResiduals,
    kde_1d,
    ks_distance,
    pair_statistics,
    standardize,
    write_contour_csv,
    write_json,
    write_kde_csv,
)
from .errors import DiagnosticsError, FlightRTSError
from .flightmodel import (
    FlightModel,
    RunwayGeometry,
    ThetaParams,
    default_noise,
    default_prior_cov,
    initial_state,
    load_config,
    signal_specs,
)
from .noise import EstimatedSchedule, KernelConfig, ResidualSeries, condition_schedule, estimate_covariance
from .smoother import CovarianceSchedule, NoiseModel, SmootherResult, backward_pass, forward_pass
from .sqm import SqmReport, report_from_pass, run_label, select_best, variance_ratios
from .timeseries import TimeSeriesTable, extract_landing_window, load_table, resample, write_csv

DEFAULT_LIMITS = (0.1, 0.4, 0.6, 0.8)


@dataclass
class RunOutcome:
    label: str
    limit: float | None
    report: SqmReport
    result: SmootherResult | None = None
    schedule: CovarianceSchedule | None = None

    @property
    def failed(self) -> bool:
        return self.result is None

    def standardized(self) -> StandardizedResiduals:
        """Residuals divided by the noise standard deviation this run assumed."""
        if self.result is None:
            raise FlightRTSError(f"run {self.label} failed; no residuals")
        return standardize(ResidualSeries.from_result(self.result), self.schedule)


@dataclass
class PipelineResult:
    runs: list[RunOutcome]
    estimate: EstimatedSchedule | None
    selected: RunOutcome
    fallback: bool
    table: TimeSeriesTable
    notes: list[str] = field(default_factory=list)

    def run(self, label: str) -> RunOutcome:
        for r in self.runs:
            if r.label == label:
                return r
        raise KeyError(label)

    @property
    def reports(self) -> list[SqmReport]:
        return [r.report for r in self.runs]


def run_smoother(model, table: TimeSeriesTable, noise: NoiseModel, x0, P0, label: str,
                 limit: float | None = None) -> RunOutcome:
    """One smoother run; failures are captured in the report instead of raised."""
    try:
        fp = forward_pass(model, table, noise, x0, P0)
        res = backward_pass(fp, model, table)
        rep = report_from_pass(fp, label, list(model.output_names))
    except (FlightRTSError, ValueError, np.linalg.LinAlgError) as exc:
        return RunOutcome(label, limit, SqmReport.failure(label, f"{type(exc).__name__}: {exc}"))
    return RunOutcome(label, limit, rep, res, noise.R)


def run_pipeline(table: TimeSeriesTable, runway: RunwayGeometry = RunwayGeometry(), *,
                 limits: Sequence[float] = DEFAULT_LIMITS, bandwidth: float = 50.0,
                 config: dict | None = None, theta0: ThetaParams = ThetaParams()) -> PipelineResult:
    """Iteration 1 with the configured constant ``R``, then one iteration 2 per limit.

    Raises
    ------
    FlightRTSError
        Iteration 1 failed, so there are no residuals to iterate on.
    """
    for lim in limits:
        if not 0.0 <= lim <= 1.0:
            raise ValueError(f"correlation limit {lim} outside [0, 1]")
    cfg = load_config() if config is None else config
    model = FlightModel(runway).state_space()
    base = default_noise(cfg)
    x0 = initial_state(table, runway, theta0)
    P0 = default_prior_cov(cfg)

    first = run_smoother(model, table, base, x0, P0, run_label(None))
    if first.failed:
        raise FlightRTSError(f"iteration 1 failed: {first.report.failed}")
    runs = [first]
    notes = []
    try:
        est = estimate_covariance(ResidualSeries.from_result(first.result), KernelConfig(bandwidth))
    except FlightRTSError as exc:
        est = None
        notes.append(f"noise estimation failed: {exc}")
    for lim in limits:
        label = run_label(lim)
        if est is None:
            runs.append(RunOutcome(label, lim, SqmReport.failure(label, "no estimated schedule")))
            continue
        try:
            sched = condition_schedule(est, lim, table.n)
        except FlightRTSError as exc:
            runs.append(RunOutcome(label, lim, SqmReport.failure(label, f"{type(exc).__name__}: {exc}")))
            continue
        runs.append(run_smoother(model, table, NoiseModel(base.Q, sched), x0, P0, label, lim))
    best, fallback = select_best([r.report for r in runs])
    selected = next(r for r in runs if r.report is best)
    return PipelineResult(runs, est, selected, fallback, table, notes)


def prepare_table(path, rate: float | None = None, window: bool = True) -> TimeSeriesTable:
    """Load a measured landing table, resample it and cut the landing window."""
    table = load_table(path, signal_specs())
    if rate is not None:
        table = resample(table, rate)
    if window:
        table = table.window(extract_landing_window(table))
    return table


# -- run directories ----------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_run(run: RunOutcome, out_dir) -> Path:
    """Write one run directory with a manifest sufficient to recompute its SQM."""
    d = Path(out_dir) / run.label
    d.mkdir(parents=True, exist_ok=True)
    manifest = {"run_label": run.label, "limit": run.limit, "failed": run.report.failed, "files": {}}
    if run.result is not None:
        res = run.result
        fp = res.filter
        t = res.time
        res.to_csv(d / "smoothed.csv")
        names = res.output_names
        cols = {f"eps:{n}": fp.innovations[:, i] for i, n in enumerate(names)}
        S = fp.innovation_variances()
        cols.update({f"S:{n}": S[:, i] for i, n in enumerate(names)})
        write_csv(d / "innovations.csv", t, cols)
        write_csv(d / "residuals.csv", t, {n: res.residuals[:, i] for i, n in enumerate(names)})
        CovarianceSchedule(run.schedule.stack(res.n), check=False).to_csv(d / "schedule.csv", t=t, names=names)
        for key in ("smoothed", "innovations", "residuals", "schedule"):
            manifest["files"][key] = {"path": f"{key}.csv", "sha256": _sha256(d / f"{key}.csv")}
        manifest["outputs"] = list(names)
        manifest["n_steps"] = res.n
        manifest["schedule_constant"] = run.schedule.is_constant
    run.report.write_json(d / "sqm.json")
    manifest["files"]["sqm"] = {"path": "sqm.json", "sha256": _sha256(d / "sqm.json")}
    with open(d / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return d


def recompute_report(run_dir) -> SqmReport:
    """Rebuild a run's SQM report from its manifest and innovations file."""
    from .sqm import sqm
    from .timeseries import read_csv_columns

    d = Path(run_dir)
    with open(d / "manifest.json") as fh:
        manifest = json.load(fh)
    label = manifest["run_label"]
    if manifest.get("failed"):
        return SqmReport.failure(label, manifest["failed"])
    names = manifest["outputs"]
    _, cols, _ = read_csv_columns(d / manifest["files"]["innovations"]["path"])
    eps = np.column_stack([cols[f"eps:{n}"] for n in names])
    S = np.column_stack([cols[f"S:{n}"] for n in names])
    r, inc = variance_ratios(eps, S)
    return sqm(r, label, names, inc)


def write_outputs(result: PipelineResult, out_dir, flight_id: str = "flight", figures: bool = True,
                  pairs=DEFAULT_PAIRS) -> dict:
    """Run directories, summary CSV, selection marker and diagnostics for the chosen run."""
    from .sqm import write_summary_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs_dir = out / "runs"
    for run in result.runs:
        write_run(run, runs_dir)
    if result.estimate is not None:
        t = result.table.time
        result.estimate.to_csv(out / "estimated_R.csv", t=t)
        result.estimate.mean_to_csv(out / "estimated_mean.csv", t=t)
        if figures:
            from . import plotting

            plotting.plot_variances(t, result.estimate.variances(), result.estimate.names,
                                    out / "estimated_R.png")
    write_summary_csv(out / "summary.csv", [(flight_id, result.reports, result.selected.label)])
    sel = result.selected
    (out / "selected.txt").write_text(sel.label + ("\n" if not result.fallback else " (fallback: no complete run)\n"))
    paths = {"summary": out / "summary.csv", "selected": out / "selected.txt", "runs": runs_dir}
    if not sel.failed:
        paths["diagnostics"] = diagnose_run(sel, out / "diagnostics", figures=figures, pairs=pairs)
    return paths


def diagnose(std: StandardizedResiduals, out_dir, figures: bool = True, pairs=DEFAULT_PAIRS,
             label: str = "") -> Path:
    """KDE and contour grids, dependence summary and (optionally) figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kdes, ks, skipped = {}, {}, {}
    for name in std.names:
        try:
            kdes[name] = kde_1d(std.series(name))
            ks[name] = ks_distance(std.series(name))
        except DiagnosticsError as exc:
            skipped[name] = str(exc)
    write_kde_csv(out / "kde.csv", kdes)
    contours = {}
    summary = []
    for a, b in pairs:
        try:
            stat, cg = pair_statistics(a, b, std.column(a), std.column(b))
        except DiagnosticsError as exc:
            skipped[f"{a}~{b}"] = str(exc)
            continue
        contours[(a, b)] = cg
        write_contour_csv(out / f"contour_{a}__{b}.csv", cg)
        entry = stat.to_dict()
        entry["grid"] = cg.metadata()
        summary.append(entry)
    summary.sort(key=lambda e: -abs(e["tau"]))
    meta = {
        "run": label,
        "kde": {n: {"bandwidth": k.bandwidth, "n": k.n, "points": int(k.grid.size), "mass": k.mass(),
                    "ks_distance": ks[n]} for n, k in kdes.items()},
        "pairs": summary,
        "skipped": skipped,
        "tail_excess_note": "KDE mass minus kernel-smoothed Gaussian reference mass where the "
                            "reference density is below 0.02; a package-specific statistic",
    }
    write_json(out / "diagnostics.json", meta)
    if figures:
        from . import plotting

        plotting.plot_kdes(kdes, out / "kde.png")
        for (a, b), cg in contours.items():
            plotting.plot_contours(cg, a, b, out / f"contour_{a}__{b}.png")
    return out


def diagnose_run(run: RunOutcome, out_dir, figures: bool = True, pairs=DEFAULT_PAIRS) -> Path:
    return diagnose(run.standardized(), out_dir, figures=figures, pairs=pairs, label=run.label)


def ks_by_component(run: RunOutcome) -> dict[str, float]:
    std = run.standardized()
    out = {}
    for n in std.names:
        s = std.series(n)
        out[n] = ks_distance(s) if s.size else math.nan
    return out


__all__ = [
    "DEFAULT_LIMITS",
    "PipelineResult",
    "RunOutcome",
    "diagnose",
    "diagnose_run",
    "ks_by_component",
    "prepare_table",
    "recompute_report",
    "run_pipeline",
    "run_smoother",
    "write_outputs",
    "write_run",
]
