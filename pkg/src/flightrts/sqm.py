"""Smoothing Quality Measure and selection among smoother runs."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .smoother import FilterPass

ABNORMAL_LIMIT = 10.0
RUN_LABELS = ("iter1", "iter2-0.1", "iter2-0.4", "iter2-0.6", "iter2-0.8")


def run_label(limit: float | None) -> str:
    return "iter1" if limit is None else f"iter2-{limit:g}"


@dataclass
class SqmReport:
    r: list[float]
    sqm: float
    abnormal: bool
    run_label: str
    complete: bool
    components: list[str] = field(default_factory=list)
    excluded: list[str] = field(default_factory=list)
    degenerate: bool = False
    failed: str | None = None

    @classmethod
    def failure(cls, run_label: str, reason: str) -> "SqmReport":
        return cls(r=[], sqm=float("nan"), abnormal=False, run_label=run_label,
                   complete=False, failed=reason)

    @property
    def ok(self) -> bool:
        return self.failed is None and math.isfinite(self.sqm) and self.sqm > 0

    def format_value(self) -> str:
        if self.failed is not None:
            return "-"
        if self.sqm >= 100 or (0 < self.sqm < 0.01):
            return f"{self.sqm:.3g}"
        return f"{self.sqm:.2f}"

    def to_text(self) -> str:
        lines = [
            f"run: {self.run_label}",
            f"sqm: {self.format_value()}",
            f"abnormal: {str(self.abnormal).lower()}",
            f"complete: {str(self.complete).lower()}",
        ]
        if self.degenerate:
            lines.append("degenerate: true")
        if self.failed is not None:
            lines.append(f"failed: {self.failed}")
        for name, r in zip(self.components, self.r):
            lines.append(f"r[{name}]: {r:.6g}")
        if self.excluded:
            lines.append("excluded: " + ", ".join(self.excluded))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sqm"] = None if not math.isfinite(self.sqm) else self.sqm
        return d

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d: dict) -> "SqmReport":
        d = dict(d)
        d["sqm"] = float("nan") if d.get("sqm") is None else d["sqm"]
        return cls(**d)


def innovation_covariance(fp: FilterPass, k: int) -> np.ndarray:
    """Theoretical covariance ``C_k P_pred_k C_k^T + R_k`` of the prediction error."""
    C = fp.C[k]
    return C @ fp.P_pred[k] @ C.T + fp.R[k]


def variance_ratios(eps: np.ndarray, S_diag: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-component ratio of empirical to theoretical prediction-error variance.

    ``eps`` and ``S_diag`` are ``(N, n)``; NaN marks unmeasured steps. Returns
    the ratios and a boolean vector of components that could be computed
    (at least two measured steps).
    """
    eps = np.asarray(eps, dtype=float)
    S_diag = np.asarray(S_diag, dtype=float)
    valid = ~np.isnan(eps)
    counts = valid.sum(axis=0)
    included = counts >= 2
    r = np.full(eps.shape[1], np.nan)
    for i in np.flatnonzero(included):
        e = eps[valid[:, i], i]
        s = S_diag[valid[:, i], i]
        # a constant series has exactly zero spread; the mean may not reproduce it
        r[i] = 0.0 if (e == e[0]).all() else np.mean((e - e.mean()) ** 2 / s)
    return r, included


def component_ratio(fp: FilterPass, i: int) -> float:
    r, inc = variance_ratios(fp.innovations[:, [i]], fp.innovation_variances()[:, [i]])
    return float(r[0]) if inc[0] else float("nan")


def sqm(r: Sequence[float], run_label: str = "", components: Sequence[str] | None = None,
        included: Sequence[bool] | None = None) -> SqmReport:
    """Geometric mean of the included ratios, with the abnormality flag."""
    r = np.asarray(r, dtype=float)
    names = list(components) if components is not None else [str(i) for i in range(r.size)]
    inc = np.isfinite(r) if included is None else (np.asarray(included, dtype=bool) & np.isfinite(r))
    if not inc.any():
        raise ValueError("no component available for the SQM")
    ri = r[inc]
    if (ri < 0).any():
        raise ValueError("ratios must be non-negative")
    degenerate = bool((ri == 0).any())
    log_mean = -math.inf if degenerate else float(np.mean(np.log(ri)))
    value = math.exp(log_mean)
    return SqmReport(
        r=[float(x) for x in ri],
        sqm=value,
        abnormal=log_mean > math.log(ABNORMAL_LIMIT),
        run_label=run_label,
        complete=bool(inc.all()),
        components=[n for n, keep in zip(names, inc) if keep],
        excluded=[n for n, keep in zip(names, inc) if not keep],
        degenerate=degenerate,
    )


def report_from_pass(fp: FilterPass, run_label: str = "", components: Sequence[str] | None = None) -> SqmReport:
    r, inc = variance_ratios(fp.innovations, fp.innovation_variances())
    return sqm(r, run_label, components, inc)


def select_best(reports: Sequence[SqmReport]) -> tuple[SqmReport, bool]:
    """Pick the run whose SQM is closest to 1 in log distance.

    Returns ``(report, fallback)``; ``fallback`` is true when no complete run
    existed and the choice was made among incomplete ones. Ties keep the
    earliest report.
    """
    if not reports:
        raise ValueError("select_best needs at least one report")
    usable = [r for r in reports if r.ok]
    pool = [r for r in usable if r.complete]
    fallback = not pool
    if fallback:
        pool = usable
    if not pool:
        # every run failed or degenerated; keep the first so callers can report it
        return reports[0], True
    best = pool[0]
    best_d = abs(math.log(best.sqm))
    for rep in pool[1:]:
        d = abs(math.log(rep.sqm))
        if d < best_d:
            best, best_d = rep, d
    return best, fallback


def write_summary_csv(path, rows: Sequence[tuple[str, Sequence[SqmReport], str]]) -> None:
    """Fleet summary in the layout ``flight, iter1, iter2-<limit>..., selected``.

    Each row is ``(flight_id, reports, selected_label)``. Failed runs print
    ``-``; incomplete runs carry a trailing ``*``.
    """
    labels: list[str] = []
    for _, reps, _ in rows:
        for rep in reps:
            if rep.run_label not in labels:
                labels.append(rep.run_label)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["flight"] + labels + ["selected"])
        for flight, reps, selected in rows:
            by_label = {rep.run_label: rep for rep in reps}
            cells = []
            for lab in labels:
                rep = by_label.get(lab)
                if rep is None or rep.failed is not None:
                    cells.append("-")
                else:
                    cells.append(rep.format_value() + ("" if rep.complete else "*"))
            w.writerow([flight] + cells + [selected])
