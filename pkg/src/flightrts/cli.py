"""Command-line interface: ``flightrts <command> [options]``.

Exit codes: 0 success, 2 input or configuration error, 3 smoother failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .errors import (
    ConditioningError,
    DivergenceError,
    FlightRTSError,
    GeometryError,
    GimbalError,
    LinearizationError,
)
from .flightmodel import FlightModel, RunwayGeometry, default_noise, default_prior_cov, initial_state, load_config
from .noise import KernelConfig, ResidualSeries, condition_schedule, estimate_covariance
from .pipeline import (
    DEFAULT_LIMITS,
    RunOutcome,
    diagnose,
    prepare_table,
    recompute_report,
    run_pipeline,
    run_smoother,
    write_outputs,
    write_run,
)
from .simulate import Scenario, simulate_flight
from .smoother import CovarianceSchedule, NoiseModel
from .sqm import run_label, select_best, write_summary_csv
from .timeseries import read_csv_columns

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SMOOTHER = 3

_SMOOTHER_ERRORS = (DivergenceError, ConditioningError, LinearizationError, GimbalError, GeometryError)

CONFIG_KEYS = {"input", "scenario", "runway", "rate", "bandwidth", "limits", "out", "seed",
               "noise", "flight_id", "figures", "window", "jobs"}


class InputError(Exception):
    """Bad paths, configuration or data; maps to exit code 2."""


class SmootherFailure(Exception):
    """Iteration 1 or a requested smoother run failed; maps to exit code 3."""


# -- configuration -------------------------------------------------------------------------

def _read_yaml(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise InputError(f"cannot parse {path}: {exc}") from None
    if not isinstance(data, dict):
        raise InputError(f"{path}: expected a mapping at top level")
    return data


def resolve_config(args) -> dict:
    """Merge the config file (if any) with command-line flags; flags win."""
    cfg = {"limits": list(DEFAULT_LIMITS), "bandwidth": 50.0, "figures": True, "window": True, "jobs": 1}
    if getattr(args, "config", None):
        data = _read_yaml(args.config)
        unknown = set(data) - CONFIG_KEYS
        if unknown:
            raise InputError(f"{args.config}: unknown keys {sorted(unknown)}")
        cfg.update(data)
    for key in CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    limits = cfg["limits"]
    if isinstance(limits, (int, float)):
        limits = [limits]
    try:
        cfg["limits"] = [float(v) for v in limits]
    except (TypeError, ValueError):
        raise InputError(f"invalid limits {limits!r}") from None
    for v in cfg["limits"]:
        if not 0.0 <= v <= 1.0:
            raise InputError(f"correlation limit {v} outside [0, 1]")
    if not float(cfg["bandwidth"]) > 0:
        raise InputError("bandwidth must be positive")
    return cfg


def _runway(cfg) -> RunwayGeometry:
    path = cfg.get("runway")
    if not path:
        return RunwayGeometry()
    try:
        return RunwayGeometry.load(path)
    except FlightRTSError as exc:
        raise InputError(str(exc)) from None
    except (OSError, TypeError, ValueError) as exc:
        raise InputError(f"runway geometry {path}: {exc}") from None


def _noise_config(cfg) -> dict:
    over = cfg.get("noise")
    if over is None:
        return load_config()
    if isinstance(over, str):
        return load_config(path=over)
    return load_config(overrides=over)


def _inputs(cfg) -> list[str]:
    val = cfg.get("input")
    if val is None:
        return []
    return [val] if isinstance(val, str) else list(val)


def _load_table(path, cfg):
    if not Path(path).exists():
        raise InputError(f"no such file: {path}")
    try:
        return prepare_table(path, cfg.get("rate"), window=bool(cfg.get("window", True)))
    except (FlightRTSError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _scenario(path, cfg) -> Scenario:
    if not Path(path).exists():
        raise InputError(f"no such scenario file: {path}")
    try:
        sc = Scenario.load(path)
        if cfg.get("seed") is not None:
            from dataclasses import replace

            sc = replace(sc, seed=int(cfg["seed"]))
    except FlightRTSError as exc:
        raise InputError(f"{path}: {exc}") from None
    return sc


# -- commands ------------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    if not cfg.get("scenario"):
        raise InputError("simulate needs --scenario")
    sc = _scenario(cfg["scenario"], cfg)
    try:
        sim = simulate_flight(sc)
    except FlightRTSError as exc:
        raise InputError(f"{cfg['scenario']}: {exc}") from None
    paths = sim.write(_out(cfg))
    for p in paths.values():
        print(p)
    return EXIT_OK


def _out(cfg) -> Path:
    if not cfg.get("out"):
        raise InputError("an output directory is required (--out)")
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create {out}: {exc.strerror}") from None
    return out


def _single_input(cfg) -> str:
    inputs = _inputs(cfg)
    if len(inputs) != 1:
        raise InputError("exactly one --input table is required")
    return inputs[0]


def _smooth_with(cfg, noise: NoiseModel, table, label, limit=None) -> RunOutcome:
    runway = _runway(cfg)
    model = FlightModel(runway).state_space()
    ncfg = _noise_config(cfg)
    x0 = initial_state(table, runway)
    run = run_smoother(model, table, noise, x0, default_prior_cov(ncfg), label, limit)
    return run


def cmd_smooth(args) -> int:
    cfg = resolve_config(args)
    table = _load_table(_single_input(cfg), cfg)
    ncfg = _noise_config(cfg)
    noise = default_noise(ncfg)
    run = _smooth_with(cfg, noise, table, run_label(None))
    d = write_run(run, _out(cfg))
    print(run.report.to_text(), end="")
    if run.failed:
        raise SmootherFailure(run.report.failed)
    print(d)
    return EXIT_OK


def cmd_estimate_noise(args) -> int:
    cfg = resolve_config(args)
    run_dir = Path(args.run)
    res_path = run_dir / "residuals.csv"
    if not res_path.exists():
        raise InputError(f"no residuals in {run_dir}")
    t, cols, _ = read_csv_columns(res_path)
    names = list(cols)
    res = ResidualSeries(np.column_stack([cols[n] for n in names]), tuple(names))
    try:
        est = estimate_covariance(res, KernelConfig(float(cfg["bandwidth"])))
    except FlightRTSError as exc:
        raise InputError(str(exc)) from None
    out = _out(cfg)
    est.to_csv(out / "estimated_R.csv", t=t)
    est.mean_to_csv(out / "estimated_mean.csv", t=t)
    print(out / "estimated_R.csv")
    return EXIT_OK


def cmd_resmooth(args) -> int:
    cfg = resolve_config(args)
    table = _load_table(_single_input(cfg), cfg)
    sched_path = Path(args.schedule)
    if not sched_path.exists():
        raise InputError(f"no such schedule file: {sched_path}")
    from .noise import EstimatedSchedule

    raw = CovarianceSchedule.from_csv(sched_path, check=False)
    R = raw.stack(table.n)
    if R.shape[0] != table.n:
        raise InputError(f"schedule has {R.shape[0]} steps, table has {table.n}")
    est = EstimatedSchedule(np.array(R), np.zeros(R.shape[:2]))
    out = _out(cfg)
    base = default_noise(_noise_config(cfg))
    status = EXIT_OK
    for lim in cfg["limits"]:
        label = run_label(lim)
        try:
            sched = condition_schedule(est, lim, table.n)
        except FlightRTSError as exc:
            raise SmootherFailure(f"{label}: {exc}") from None
        run = _smooth_with(cfg, NoiseModel(base.Q, sched), table, label, lim)
        write_run(run, out)
        print(run.report.to_text(), end="")
        if run.failed:
            status = EXIT_SMOOTHER
    return status


def cmd_sqm(args) -> int:
    reports = []
    for d in args.runs:
        if not (Path(d) / "manifest.json").exists():
            raise InputError(f"no manifest in {d}")
        try:
            reports.append(recompute_report(d))
        except (KeyError, ValueError, FlightRTSError) as exc:
            raise InputError(f"{d}: {exc}") from None
    for rep in reports:
        print(rep.to_text())
    if len(reports) > 1:
        best, fallback = select_best(reports)
        print(f"selected: {best.run_label}" + (" (fallback)" if fallback else ""))
    return EXIT_OK


def _pipeline_one(job):
    """Worker for one flight: returns (flight_id, reports, selected label)."""
    flight_id, source, kind, cfg, out = job
    if kind == "scenario":
        sc = _scenario(source, cfg)
        sim = simulate_flight(sc)
        sim.write(out / "simulation")
        from .timeseries import extract_landing_window

        table = sim.measured
        if cfg.get("window", True):
            table = table.window(extract_landing_window(table))
        runway = sc.runway
    else:
        table = _load_table(source, cfg)
        runway = _runway(cfg)
    try:
        result = run_pipeline(table, runway, limits=cfg["limits"], bandwidth=float(cfg["bandwidth"]),
                              config=_noise_config(cfg))
    except FlightRTSError as exc:
        raise SmootherFailure(f"{flight_id}: {exc}") from None
    write_outputs(result, out, flight_id=flight_id, figures=bool(cfg.get("figures", True)))
    return flight_id, result.reports, result.selected.label


def cmd_pipeline(args) -> int:
    cfg = resolve_config(args)
    out = _out(cfg)
    jobs = []
    if cfg.get("scenario"):
        scen = cfg["scenario"]
        scen = [scen] if isinstance(scen, str) else list(scen)
        jobs += [(Path(s).stem, s, "scenario") for s in scen]
    jobs += [(Path(p).stem, p, "table") for p in _inputs(cfg)]
    if not jobs:
        raise InputError("pipeline needs --input or --scenario")
    if len(jobs) == 1 and cfg.get("flight_id"):
        jobs = [(cfg["flight_id"],) + jobs[0][1:]]
    ids = [j[0] for j in jobs]
    if len(set(ids)) != len(ids):
        raise InputError("flight identifiers (file stems) must be unique")
    single = len(jobs) == 1
    work = [(fid, src, kind, cfg, out if single else out / fid) for fid, src, kind in jobs]
    n_workers = max(1, int(cfg.get("jobs") or 1))
    if n_workers > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            rows = list(pool.map(_pipeline_one, work))
    else:
        rows = [_pipeline_one(w) for w in work]
    if not single:
        write_summary_csv(out / "summary.csv", rows)
    print((out / "summary.csv").read_text(), end="")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = resolve_config(args)
    run_dir = Path(args.run)
    res_path, sched_path = run_dir / "residuals.csv", run_dir / "schedule.csv"
    for p in (res_path, sched_path):
        if not p.exists():
            raise InputError(f"missing {p.name} in {run_dir}")
    t, cols, _ = read_csv_columns(res_path)
    names = list(cols)
    res = ResidualSeries(np.column_stack([cols[n] for n in names]), tuple(names))
    sched = CovarianceSchedule.from_csv(sched_path, names=names, check=False)
    from .diagnostics import standardize

    try:
        std = standardize(res, sched)
    except FlightRTSError as exc:
        raise InputError(str(exc)) from None
    out = Path(cfg["out"]) if cfg.get("out") else run_dir / "diagnostics"
    diagnose(std, out, figures=bool(cfg.get("figures", True)), label=run_dir.name)
    print(out)
    return EXIT_OK


# -- parser --------------------------------------------------------------------------------

def _limits(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid limit list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flightrts", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, inputs=True):
        p.add_argument("--config", help="YAML file with pipeline settings; flags override it")
        p.add_argument("--out", help="output directory")
        if inputs:
            p.add_argument("--input", action="append", help="measured table (CSV); repeatable for pipeline")
            p.add_argument("--runway", help="runway geometry YAML")
            p.add_argument("--rate", type=float, help="resampling rate in Hz")
            p.add_argument("--noise", help="YAML with output_std/input_std/prior_std overrides")
            p.add_argument("--no-window", dest="window", action="store_false", default=None,
                           help="smooth the whole table instead of the landing window")

    p = sub.add_parser("simulate", help="generate a synthetic landing")
    common(p, inputs=False)
    p.add_argument("--scenario", help="scenario YAML")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("smooth", help="one smoother run with the configured constant R")
    common(p)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("estimate-noise", help="kernel estimate of R from a run's residuals")
    common(p, inputs=False)
    p.add_argument("--run", required=True, help="run directory containing residuals.csv")
    p.add_argument("--bandwidth", type=float)
    p.set_defaults(func=cmd_estimate_noise)

    p = sub.add_parser("resmooth", help="second iteration with an estimated R schedule")
    common(p)
    p.add_argument("--schedule", required=True, help="estimated_R.csv")
    p.add_argument("--limits", type=_limits)
    p.set_defaults(func=cmd_resmooth)

    p = sub.add_parser("sqm", help="recompute SQM reports from run directories")
    p.add_argument("runs", nargs="+", help="run directories")
    p.set_defaults(func=cmd_sqm)

    p = sub.add_parser("pipeline", help="iteration 1, noise estimation, iteration 2 per limit")
    common(p)
    p.add_argument("--scenario", action="append", help="simulate from scenario YAML instead of --input")
    p.add_argument("--seed", type=int)
    p.add_argument("--limits", type=_limits, help="correlation limits, e.g. '0.1 0.4 0.6 0.8'")
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--flight-id", dest="flight_id")
    p.add_argument("--jobs", type=int, help="flights processed in parallel")
    p.add_argument("--no-figures", dest="figures", action="store_false", default=None)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("diagnose", help="KDEs and normalized contours for a run directory")
    common(p, inputs=False)
    p.add_argument("--run", required=True)
    p.add_argument("--no-figures", dest="figures", action="store_false", default=None)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SmootherFailure as exc:
        print(f"smoother failure: {exc}", file=sys.stderr)
        return EXIT_SMOOTHER
    except _SMOOTHER_ERRORS as exc:
        print(f"smoother failure: {exc}", file=sys.stderr)
        return EXIT_SMOOTHER
    except FlightRTSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
