"""Residual diagnostics: standardization, marginal KDEs and normalized contours.

The tail-excess statistic reported by :func:`dependence_summary` is this
package's own quantification of contour deviations from a Gaussian copula; it
is not a standard test statistic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import interpolate, stats

from .errors import ConditioningError, DiagnosticsError
from .noise import EstimatedSchedule, ResidualSeries
from .smoother import CovarianceSchedule

KDE_POINTS = 512
MIN_KDE_POINTS = 50
MIN_CONTOUR_POINTS = 200
GRID_LIMIT = 3.0
GRID_POINTS = 121
TIE_WARNING_FRACTION = 0.2
TAIL_LEVEL = 0.02

DEFAULT_PAIRS = (("theta", "q"), ("phi", "p"), ("V_GND", "v_W"), ("V_GND", "u_W"))


@dataclass(frozen=True)
class StandardizedResiduals:
    values: np.ndarray  # (N, n), NaN where the residual is missing
    names: tuple[str, ...]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def series(self, name: str) -> np.ndarray:
        """Non-missing values of one component."""
        col = self.column(name)
        return col[~np.isnan(col)]

    @staticmethod
    def concatenate(parts: Sequence["StandardizedResiduals"]) -> "StandardizedResiduals":
        """Stack flights that were standardized separately."""
        if not parts:
            raise ValueError("nothing to concatenate")
        names = parts[0].names
        if any(p.names != names for p in parts):
            raise ValueError("component names differ between parts")
        return StandardizedResiduals(np.vstack([p.values for p in parts]), names)


def standardize(res: ResidualSeries, sched) -> StandardizedResiduals:
    """Divide each residual by the square root of its noise variance at that step.

    ``sched`` may be an :class:`EstimatedSchedule` or a
    :class:`~flightrts.smoother.CovarianceSchedule`.
    """
    if isinstance(sched, EstimatedSchedule):
        var = sched.variances()
    elif isinstance(sched, CovarianceSchedule):
        var = sched.variances(res.n)
    else:
        var = np.asarray(sched, dtype=float)
        if var.ndim == 1:
            var = np.broadcast_to(var, res.values.shape)
    if var.shape != res.values.shape:
        raise ValueError(f"schedule shape {var.shape} does not match residuals {res.values.shape}")
    if (var <= 0).any() or not np.isfinite(var).all():
        k, i = np.argwhere(~(var > 0))[0]
        raise ConditioningError(f"non-positive variance for {res.names[i]!r} at step {k}", step=int(k))
    return StandardizedResiduals(res.values / np.sqrt(var), res.names)


def silverman_bandwidth(sample: np.ndarray) -> float:
    x = np.asarray(sample, dtype=float)
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * x.size ** (-0.2)


def _clean(sample) -> np.ndarray:
    x = np.asarray(sample, dtype=float).ravel()
    return x[np.isfinite(x)]


@dataclass(frozen=True)
class Kde1D:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    n: int

    def mass(self) -> float:
        return float(np.trapezoid(self.density, self.grid))


def kde_1d(sample, grid: np.ndarray | None = None, min_points: int = MIN_KDE_POINTS) -> Kde1D:
    """Gaussian-kernel density estimate with Silverman's bandwidth.

    Without ``grid`` the density is evaluated at 512 points over
    ``[min - 3h, max + 3h]``.
    """
    x = _clean(sample)
    if x.size < min_points:
        raise DiagnosticsError(f"KDE needs at least {min_points} points, got {x.size}")
    if x.size < 2 or np.ptp(x) == 0:
        raise DiagnosticsError("degenerate sample: zero variance")
    h = silverman_bandwidth(x)
    if not h > 0:
        raise DiagnosticsError("degenerate sample: zero bandwidth")
    g = np.linspace(x.min() - 3 * h, x.max() + 3 * h, KDE_POINTS) if grid is None else np.asarray(grid, float)
    dens = np.zeros_like(g)
    for start in range(0, x.size, 4096):
        z = (g[:, None] - x[None, start:start + 4096]) / h
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    dens /= x.size * h * math.sqrt(2 * math.pi)
    return Kde1D(g, dens, float(h), int(x.size))


def normal_scores(sample) -> np.ndarray:
    """Rank-based transform to standard normal margins, ``Phi^-1(rank / (n + 1))``."""
    x = np.asarray(sample, dtype=float)
    ranks = stats.rankdata(x, method="average")
    return stats.norm.ppf(ranks / (x.size + 1))


def _tie_fraction(x: np.ndarray) -> float:
    return 1.0 - np.unique(x).size / x.size


@dataclass
class ContourGrid:
    grid: np.ndarray  # 1-D axis shared by both coordinates
    density: np.ndarray  # (G, G), rows index y, columns index x
    reference: np.ndarray  # (G, G) bivariate normal with correlation rho
    rho: float
    bandwidths: tuple[float, float]
    n: int
    warnings: list[str] = field(default_factory=list)

    def mass(self, which: str = "density") -> float:
        d = getattr(self, which)
        return float(np.trapezoid(np.trapezoid(d, self.grid, axis=1), self.grid))

    def metadata(self) -> dict:
        return {
            "grid": {"min": float(self.grid[0]), "max": float(self.grid[-1]), "points": int(self.grid.size)},
            "rho": self.rho,
            "bandwidths": list(self.bandwidths),
            "n": self.n,
            "mass": self.mass(),
            "reference_mass": self.mass("reference"),
            "warnings": list(self.warnings),
        }


def _bvn_density(X, Y, rho, sx=1.0, sy=1.0):
    # a perfectly dependent pair has no density; keep the reference finite
    rho = min(max(rho, -1.0 + 1e-9), 1.0 - 1e-9)
    det = sx * sx * sy * sy * (1 - rho * rho)
    q = (sy * sy * X * X - 2 * rho * sx * sy * X * Y + sx * sx * Y * Y) / det
    return np.exp(-0.5 * q) / (2 * math.pi * math.sqrt(det))


def normalized_contours(sample_x, sample_y, points: int = GRID_POINTS,
                        min_points: int = MIN_CONTOUR_POINTS) -> ContourGrid:
    """Product-kernel KDE of normal scores against a Gaussian-copula reference."""
    x = np.asarray(sample_x, dtype=float).ravel()
    y = np.asarray(sample_y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("paired samples must have equal length")
    keep = np.isfinite(x) & np.isfinite(y)
    x, y = x[keep], y[keep]
    if x.size < min_points:
        raise DiagnosticsError(f"contours need at least {min_points} paired points, got {x.size}")
    warnings = []
    for label, v in (("x", x), ("y", y)):
        if _tie_fraction(v) > TIE_WARNING_FRACTION:
            warnings.append(f"rank degeneracy: more than {TIE_WARNING_FRACTION:.0%} ties in {label}")
    zx, zy = normal_scores(x), normal_scores(y)
    rho = float(np.corrcoef(zx, zy)[0, 1])
    hx, hy = silverman_bandwidth(zx), silverman_bandwidth(zy)
    g = np.linspace(-GRID_LIMIT, GRID_LIMIT, points)
    kx = np.exp(-0.5 * ((g[:, None] - zx[None, :]) / hx) ** 2) / (hx * math.sqrt(2 * math.pi))
    ky = np.exp(-0.5 * ((g[:, None] - zy[None, :]) / hy) ** 2) / (hy * math.sqrt(2 * math.pi))
    dens = ky @ kx.T / x.size
    X, Y = np.meshgrid(g, g)
    ref = _bvn_density(X, Y, rho)
    return ContourGrid(g, dens, ref, rho, (float(hx), float(hy)), int(x.size), warnings)


def smoothed_reference(cg: ContourGrid) -> np.ndarray:
    """The Gaussian reference convolved with the KDE kernel.

    This is the expectation of the KDE under an exact Gaussian copula, so the
    comparison is free of the kernel's own smoothing bias.
    """
    hx, hy = cg.bandwidths
    sx, sy = math.sqrt(1 + hx * hx), math.sqrt(1 + hy * hy)
    X, Y = np.meshgrid(cg.grid, cg.grid)
    # smoothing adds independent kernel noise, so the covariance is unchanged
    return _bvn_density(X, Y, cg.rho / (sx * sy), sx, sy)


def tail_excess(cg: ContourGrid, level: float = TAIL_LEVEL) -> float:
    """Signed excess of KDE mass over the reference where the reference is below ``level``."""
    outside = cg.reference < level
    diff = np.where(outside, cg.density - smoothed_reference(cg), 0.0)
    return float(np.trapezoid(np.trapezoid(diff, cg.grid, axis=1), cg.grid))


def contour_exceedance(cg: ContourGrid, level: float, direction: tuple[float, float]) -> float:
    """Distance from the origin at which the KDE falls below ``level`` along ``direction``,
    minus the same distance for the reference."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    s = np.linspace(0.0, GRID_LIMIT * math.sqrt(2), 400)
    s = s[(np.abs(s * d[0]) <= GRID_LIMIT) & (np.abs(s * d[1]) <= GRID_LIMIT)]
    pts = np.column_stack([s * d[1], s * d[0]])  # (y, x) order
    out = []
    for field_ in (cg.density, cg.reference):
        vals = interpolate.RegularGridInterpolator((cg.grid, cg.grid), field_)(pts)
        below = np.flatnonzero(vals < level)
        out.append(s[below[0]] if below.size else s[-1])
    return float(out[0] - out[1])


def level_set_eccentricity(cg: ContourGrid, level: float) -> float:
    """Ratio of principal axes of the region where the KDE exceeds ``level``.

    Computed from the second moments of the superlevel set; 1 for a circle.
    """
    X, Y = np.meshgrid(cg.grid, cg.grid)
    inside = cg.density >= level
    if inside.sum() < 3:
        raise DiagnosticsError(f"level {level} encloses too few grid points")
    pts = np.column_stack([X[inside], Y[inside]])
    cov = np.cov(pts, rowvar=False)
    ev = np.linalg.eigvalsh(cov)
    return float(math.sqrt(ev[1] / ev[0]))


@dataclass(frozen=True)
class PairStatistics:
    x: str
    y: str
    rho: float
    tau: float
    tail_excess: float
    n: int
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "rho": self.rho, "tau": self.tau,
                "tail_excess": self.tail_excess, "n": self.n, "warnings": list(self.warnings)}


def pair_statistics(x_name: str, y_name: str, x, y) -> tuple[PairStatistics, ContourGrid]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = np.isfinite(x) & np.isfinite(y)
    cg = normalized_contours(x[keep], y[keep])
    tau = float(stats.kendalltau(x[keep], y[keep]).statistic)
    return PairStatistics(x_name, y_name, cg.rho, tau, tail_excess(cg), cg.n, tuple(cg.warnings)), cg


def dependence_summary(pairs: Iterable[tuple[str, str]] = DEFAULT_PAIRS, data=None) -> list[PairStatistics]:
    """Statistics per pair, sorted by decreasing ``|tau|``.

    ``data`` maps component names to 1-D arrays (or is a
    :class:`StandardizedResiduals`).
    """
    if data is None:
        raise ValueError("data is required")
    get = data.column if isinstance(data, StandardizedResiduals) else (lambda n: np.asarray(data[n]))
    out = [pair_statistics(a, b, get(a), get(b))[0] for a, b in pairs]
    return sorted(out, key=lambda p: -abs(p.tau))


def ks_distance(sample) -> float:
    """Kolmogorov-Smirnov distance of a sample to the standard normal."""
    return float(stats.kstest(_clean(sample), "norm").statistic)


# -- file output -------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def write_kde_csv(path, kdes: dict[str, Kde1D]) -> None:
    """Long-format KDE table ``component, x, density``."""
    with open(path, "w") as fh:
        fh.write("component,x,density\n")
        for name, kd in kdes.items():
            for gx, d in zip(kd.grid, kd.density):
                fh.write(f"{name},{_fmt(gx)},{_fmt(d)}\n")


def write_contour_csv(path, cg: ContourGrid) -> None:
    """Long-format grid ``x, y, density, reference``."""
    with open(path, "w") as fh:
        fh.write("x,y,density,reference\n")
        for iy, gy in enumerate(cg.grid):
            for ix, gx in enumerate(cg.grid):
                fh.write(f"{_fmt(gx)},{_fmt(gy)},{_fmt(cg.density[iy, ix])},{_fmt(cg.reference[iy, ix])}\n")


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
