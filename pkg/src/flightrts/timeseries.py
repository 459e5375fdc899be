"""Uniformly sampled flight time series: loading, resampling and windowing.

Tables are immutable. Missing cells are stored as NaN. The canonical
interchange format is CSV with one header row, a ``t`` column in seconds and
empty cells for missing values; headers may carry a unit in brackets, e.g.
``h_RALT[m]``.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import FormatError, SchemaError, UnitError, WindowError

FT_TO_M = 0.3048
RECORDED_RATE_RANGE = (0.25, 16.0)
KINDS = ("continuous", "discrete", "angular")

_HEADER_RE = re.compile(r"^\s*([^\[\]]+?)\s*(?:\[([^\[\]]*)\])?\s*$")


@dataclass(frozen=True)
class SignalSpec:
    """Declaration of one recorded or simulated signal.

    ``kind`` selects the resampling rule: piecewise-linear for
    ``"continuous"``, previous-value hold for ``"discrete"`` and linear on the
    unwrapped circle for ``"angular"``.
    """

    name: str
    unit: str = ""
    native_rate: float | None = None
    kind: str = "continuous"
    recorded: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown signal kind {self.kind!r}")
        if self.native_rate is not None:
            if not self.native_rate > 0:
                raise ValueError(f"{self.name}: native_rate must be positive")
            lo, hi = RECORDED_RATE_RANGE
            if self.recorded and not lo <= self.native_rate <= hi:
                raise ValueError(
                    f"{self.name}: recorded rate {self.native_rate} Hz outside [{lo}, {hi}]"
                )

    @property
    def period(self) -> float:
        """Wrap period for angular signals."""
        return 360.0 if self.unit.lower() in ("deg", "degree", "degrees") else 2.0 * math.pi


@dataclass(frozen=True)
class FlightWindow:
    start_index: int
    end_index: int

    def __post_init__(self):
        if not 0 <= self.start_index < self.end_index:
            raise WindowError(f"invalid window [{self.start_index}, {self.end_index}]")

    def __len__(self):
        return self.end_index - self.start_index + 1


@dataclass(frozen=True)
class TimeSeriesTable:
    t0: float
    dt: float
    columns: Mapping[str, np.ndarray]
    specs: Mapping[str, SignalSpec] = field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0:
            raise FormatError("dt must be positive")
        cols = {}
        n = None
        for name, values in self.columns.items():
            arr = np.array(values, dtype=float)
            if arr.ndim != 1:
                raise FormatError(f"column {name!r} is not one-dimensional")
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise FormatError(f"column {name!r} has length {arr.size}, expected {n}")
            arr.setflags(write=False)
            cols[name] = arr
        if n is not None and n < 2:
            raise FormatError("a table needs at least two samples")
        specs = {name: self.specs.get(name, SignalSpec(name, recorded=False)) for name in cols}
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "specs", specs)

    @classmethod
    def from_arrays(cls, dt, data, t0=0.0, specs: Iterable[SignalSpec] = ()):
        return cls(t0=float(t0), dt=float(dt), columns=dict(data), specs={s.name: s for s in specs})

    @property
    def n(self) -> int:
        return next(iter(self.columns.values())).size if self.columns else 0

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    @property
    def time(self) -> np.ndarray:
        return self.t0 + np.arange(self.n) * self.dt

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise SchemaError(f"table has no column {name!r}") from None

    def __contains__(self, name):
        return name in self.columns

    def unit(self, name: str) -> str:
        return self.specs[name].unit

    def missing(self, name: str) -> np.ndarray:
        return np.isnan(self[name])

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """Stack the named columns into an ``(n, len(names))`` array."""
        return np.column_stack([self[name] for name in names]) if names else np.empty((self.n, 0))

    def with_columns(self, data: Mapping[str, np.ndarray], specs: Iterable[SignalSpec] = ()):
        cols = dict(self.columns)
        cols.update(data)
        new_specs = dict(self.specs)
        new_specs.update({s.name: s for s in specs})
        return TimeSeriesTable(self.t0, self.dt, cols, new_specs)

    def select(self, names: Sequence[str]) -> "TimeSeriesTable":
        return TimeSeriesTable(self.t0, self.dt, {n: self[n] for n in names}, self.specs)

    def window(self, win: FlightWindow) -> "TimeSeriesTable":
        if win.end_index >= self.n:
            raise WindowError(f"window end {win.end_index} beyond table length {self.n}")
        sl = slice(win.start_index, win.end_index + 1)
        return TimeSeriesTable(
            self.t0 + win.start_index * self.dt,
            self.dt,
            {k: v[sl] for k, v in self.columns.items()},
            self.specs,
        )

    def to_csv(self, path) -> None:
        write_csv(path, self.time, self.columns, {k: s.unit for k, s in self.specs.items()})


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def write_csv(path, t, columns: Mapping[str, np.ndarray], units: Mapping[str, str] | None = None):
    """Write columns in the canonical CSV layout; output is byte-deterministic."""
    units = units or {}
    header = ["t[s]"] + [f"{k}[{units[k]}]" if units.get(k) else k for k in columns]
    arrays = [np.asarray(t, dtype=float)] + [np.asarray(v, dtype=float) for v in columns.values()]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*arrays):
            w.writerow([_fmt(x) for x in row])


def _parse_header(raw: str) -> tuple[str, str | None]:
    m = _HEADER_RE.match(raw)
    if not m:
        raise FormatError(f"cannot parse column header {raw!r}")
    return m.group(1), m.group(2)


def read_csv_columns(path) -> tuple[np.ndarray, dict[str, np.ndarray], dict[str, str | None]]:
    """Read a canonical CSV file into ``(t, columns, units)`` without validation of specs."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        df = pd.read_csv(path, skipinitialspace=True, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise FormatError(f"{path}: empty file") from None
    parsed = {}
    units = {}
    for raw in df.columns:
        name, unit = _parse_header(raw)
        if name in parsed:
            raise FormatError(f"{path}: duplicate column {name!r}")
        cells = df[raw].str.strip()
        try:
            # exact decimal parsing so repr-formatted floats round-trip bit-for-bit
            values = np.array(cells.replace("", "nan").to_numpy(dtype=str), dtype=float)
        except (ValueError, TypeError):
            raise FormatError(f"{path}: non-numeric value in column {name!r}") from None
        parsed[name] = values
        units[name] = unit
    if "t" not in parsed:
        raise SchemaError(f"{path}: missing time column 't'")
    t = parsed.pop("t")
    t_unit = units.pop("t")
    if t_unit not in (None, "", "s"):
        raise UnitError(f"{path}: time column must be in seconds, got {t_unit!r}")
    return t, parsed, units


def _uniform_step(t: np.ndarray, where: str) -> float:
    if t.size < 2:
        raise FormatError(f"{where}: a table needs at least two samples")
    if np.isnan(t).any():
        raise FormatError(f"{where}: missing timestamps")
    d = np.diff(t)
    if not (d > 0).all():
        k = int(np.argmin(d > 0)) + 1
        raise FormatError(f"{where}: time not strictly increasing at row {k} (t={t[k]!r})")
    dt = (t[-1] - t[0]) / (t.size - 1)
    if np.max(np.abs(d - dt)) > 1e-6 * dt + 1e-9:
        raise FormatError(f"{where}: time grid is not uniform")
    return float(dt)


def load_table(path, specs: Sequence[SignalSpec]) -> TimeSeriesTable:
    """Load the declared signals from a canonical CSV file.

    Raises
    ------
    SchemaError
        A declared signal has no column.
    FormatError
        Non-monotone or non-uniform time, unparsable cells.
    UnitError
        A header unit differs from the declared unit.
    """
    t, cols, units = read_csv_columns(path)
    dt = _uniform_step(t, str(path))
    out = {}
    for spec in specs:
        if spec.name not in cols:
            raise SchemaError(f"{path}: missing column {spec.name!r}")
        unit = units[spec.name]
        if unit is not None and unit != spec.unit:
            raise UnitError(f"{path}: column {spec.name!r} has unit {unit!r}, expected {spec.unit!r}")
        out[spec.name] = cols[spec.name]
    return TimeSeriesTable(float(t[0]), dt, out, {s.name: s for s in specs})


def _wrap_like(values: np.ndarray, period: float, signed: bool) -> np.ndarray:
    if signed:
        half = period / 2.0
        return half - np.mod(half - values, period)
    return np.mod(values, period)


def _resample_column(t_src, y, t_new, spec: SignalSpec, target_rate: float) -> np.ndarray:
    out = np.full(t_new.size, np.nan)
    valid = ~np.isnan(y)
    if not valid.any():
        return out
    ts, ys = t_src[valid], y[valid]
    max_gap = 2.0 / target_rate
    if spec.native_rate:
        max_gap = max(max_gap, 2.0 / spec.native_rate)
    tol = 1e-9 * max(abs(t_src[-1]), 1.0)

    # bracketing valid source samples
    hi = np.searchsorted(ts, t_new, side="left")
    inside = (t_new >= ts[0] - tol) & (t_new <= ts[-1] + tol)
    hi_c = np.clip(hi, 1, max(ts.size - 1, 1))
    lo_c = hi_c - 1
    if ts.size == 1:
        gap_ok = np.zeros(t_new.size, dtype=bool)
    else:
        gap_ok = (ts[hi_c] - ts[lo_c]) <= max_gap + tol

    if spec.kind == "discrete":
        prev = np.searchsorted(ts, t_new + tol, side="right") - 1
        prev_c = np.clip(prev, 0, ts.size - 1)
        vals = ys[prev_c]
    elif spec.kind == "angular":
        period = spec.period
        unwrapped = np.unwrap(ys, period=period)
        vals = np.interp(t_new, ts, unwrapped)
        vals = _wrap_like(vals, period, signed=bool((ys < 0).any()))
    else:
        vals = np.interp(t_new, ts, ys)
    ok = inside & gap_ok
    out[ok] = vals[ok]

    # grid points that coincide with valid source samples keep the source value
    j = np.searchsorted(ts, t_new)
    for cand in (j - 1, j):
        c = np.clip(cand, 0, ts.size - 1)
        hit = np.abs(ts[c] - t_new) <= tol
        out[hit] = ys[c[hit]]
    return out


def resample(table: TimeSeriesTable, target_rate: float) -> TimeSeriesTable:
    """Put every column on a common grid at ``target_rate`` Hz starting at ``t0``."""
    if not target_rate > 0:
        raise ValueError("target_rate must be positive")
    if not table.columns:
        raise ValueError("cannot resample an empty table")
    dt_new = 1.0 / target_rate
    t_src = table.time
    span = t_src[-1] - t_src[0]
    if math.isclose(dt_new, table.dt, rel_tol=1e-12):
        dt_new = table.dt
    n_new = int(math.floor(span / dt_new + 1e-9)) + 1
    if n_new < 2:
        raise ValueError("target rate too low for the table span")
    t_new = table.t0 + np.arange(n_new) * dt_new
    cols = {
        name: _resample_column(t_src, values, t_new, table.specs[name], target_rate)
        for name, values in table.columns.items()
    }
    return TimeSeriesTable(table.t0, dt_new, cols, table.specs)


def _height_in_m(table: TimeSeriesTable, name: str) -> np.ndarray:
    unit = table.unit(name).lower()
    h = table[name]
    if unit in ("ft", "feet"):
        return h * FT_TO_M
    if unit in ("", "m"):
        return h
    raise UnitError(f"column {name!r}: unsupported altitude unit {unit!r}")


def extract_landing_window(
    table: TimeSeriesTable,
    ralt_threshold: float = 1000.0,
    gnd_speed_floor: float = 15.0,
    *,
    ralt_column: str = "h_RALT",
    speed_column: str = "V_GND",
    touchdown_height: float = 1.5,
) -> FlightWindow:
    """Locate the landing segment from ``ralt_threshold`` feet down to taxi speed.

    The window starts at the last descending crossing of the radio-altitude
    threshold before touchdown (first sample at or below ``touchdown_height``
    metres) and ends at the first sample after touchdown whose ground speed is
    below ``gnd_speed_floor`` m/s, or at the last sample if that never happens.
    """
    h = _height_in_m(table, ralt_column)
    v = table[speed_column]
    thr = ralt_threshold * FT_TO_M
    t = table.time

    valid = np.flatnonzero(~np.isnan(h))
    if valid.size < 2:
        raise WindowError("radio altitude has fewer than two valid samples")
    hv = h[valid]
    below = np.flatnonzero(hv <= touchdown_height)
    td_pos = below[0] if below.size else hv.size - 1

    crossings = np.flatnonzero((hv[:-1] > thr) & (hv[1:] <= thr)) + 1
    crossings = crossings[crossings <= td_pos]
    if crossings.size == 0:
        raise WindowError(f"no descending crossing of {ralt_threshold} ft before touchdown")
    c = crossings[-1]
    i0, i1 = valid[c - 1], valid[c]
    frac = (hv[c - 1] - thr) / (hv[c - 1] - hv[c])
    t_cross = t[i0] + frac * (t[i1] - t[i0])
    start = int(round((t_cross - table.t0) / table.dt))

    if below.size == 0:
        end = table.n - 1
    else:
        td = valid[td_pos]
        slow = np.flatnonzero((np.arange(table.n) > td) & (v < gnd_speed_floor))
        end = int(slow[0]) if slow.size else table.n - 1
    start = min(max(start, 0), table.n - 1)
    if end <= start:
        raise WindowError(f"empty landing window (start {start}, end {end})")
    return FlightWindow(start, end)
