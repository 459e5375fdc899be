"""Time-varying measurement-noise estimation from smoother residuals.

Mean and covariance at step ``k`` are Gaussian-kernel weighted averages over
all steps ``t``, with weights ``exp(-(t - k)^2 / (2 b))`` normalized over
``t``. Missing residuals are dropped pairwise and the remaining weights are
renormalized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EstimationError
from .smoother import SPD_EPS, CovarianceSchedule, symmetrize
from .timeseries import write_csv

MIN_OBSERVATIONS = 10
_BLOCK = 512
_BISECTIONS = 50


@dataclass(frozen=True)
class KernelConfig:
    bandwidth: float = 50.0

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")


@dataclass(frozen=True)
class ResidualSeries:
    values: np.ndarray  # (N, n), NaN = missing
    names: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if v.shape[0] == 1 and np.asarray(self.values).ndim == 1:
            v = v.T
        object.__setattr__(self, "values", v)
        names = tuple(self.names) or tuple(str(i) for i in range(v.shape[1]))
        if len(names) != v.shape[1]:
            raise ValueError("names do not match the number of components")
        object.__setattr__(self, "names", names)

    @classmethod
    def from_result(cls, result) -> "ResidualSeries":
        return cls(result.residuals, tuple(result.output_names))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def mask(self) -> np.ndarray:
        return ~np.isnan(self.values)


@dataclass(frozen=True)
class EstimatedSchedule:
    R: np.ndarray  # (N, n, n)
    m: np.ndarray  # (N, n)
    names: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.R.shape[0]

    def variances(self) -> np.ndarray:
        return np.diagonal(self.R, axis1=1, axis2=2)

    def schedule(self) -> CovarianceSchedule:
        return CovarianceSchedule(self.R)

    def to_csv(self, path, t=None) -> None:
        CovarianceSchedule(self.R, check=False).to_csv(path, t=t, names=self.names)

    def mean_to_csv(self, path, t=None) -> None:
        t = np.arange(self.n, dtype=float) if t is None else t
        write_csv(path, t, {f"m:{name}": self.m[:, i] for i, name in enumerate(self.names)})


def _kernel_block(rows: np.ndarray, N: int, b: float) -> np.ndarray:
    t = np.arange(N, dtype=float)
    d = t[None, :] - rows[:, None].astype(float)
    return np.exp(-(d * d) / (2.0 * b))


def kernel_weights(N: int, k: int, cfg: KernelConfig = KernelConfig()) -> np.ndarray:
    """Normalized weights over ``t = 0 .. N-1`` for the (0-based) step ``k``."""
    if not 0 <= k < N:
        raise IndexError(f"k={k} outside [0, {N})")
    w = _kernel_block(np.array([k]), N, cfg.bandwidth)[0]
    return w / w.sum()


def _smooth(values: np.ndarray, weights_mask: np.ndarray, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Kernel sums ``sum_t w(t,k) v_t`` and ``sum_t w(t,k) mask_t`` for all ``k``."""
    N = values.shape[0]
    num = np.empty_like(values)
    den = np.empty_like(weights_mask)
    for start in range(0, N, _BLOCK):
        rows = np.arange(start, min(start + _BLOCK, N))
        Kb = _kernel_block(rows, N, b)
        num[rows] = Kb @ values
        den[rows] = Kb @ weights_mask
    return num, den


def _check_components(res: ResidualSeries, minimum: int) -> None:
    counts = res.mask.sum(axis=0)
    for name, c in zip(res.names, counts):
        if c == 0:
            raise EstimationError(f"component {name!r} has no observations")
        if c < minimum:
            raise EstimationError(f"component {name!r} has only {int(c)} observations (< {minimum})")


def estimate_mean(res: ResidualSeries, cfg: KernelConfig = KernelConfig()) -> np.ndarray:
    """Kernel-weighted local mean of each residual component, shape ``(N, n)``."""
    _check_components(res, 1)
    mask = res.mask.astype(float)
    num, den = _smooth(np.where(res.mask, res.values, 0.0), mask, cfg.bandwidth)
    if (den <= 0).any():
        raise EstimationError("kernel weights underflow for some step; increase the bandwidth")
    return num / den


def estimate_covariance(res: ResidualSeries, cfg: KernelConfig = KernelConfig()) -> EstimatedSchedule:
    """Kernel-weighted local covariance of the mean-corrected residuals.

    The result is not conditioned; see :func:`apply_correlation_limit`.
    """
    _check_components(res, MIN_OBSERVATIONS)
    m = estimate_mean(res, cfg)
    e = np.where(res.mask, res.values - m, 0.0)
    mk = res.mask.astype(float)
    n = e.shape[1]
    iu, ju = np.triu_indices(n)
    prods = e[:, iu] * e[:, ju]
    both = mk[:, iu] * mk[:, ju]
    num, den = _smooth(prods, both, cfg.bandwidth)
    diag = iu == ju
    if (den[:, diag] <= 0).any():
        raise EstimationError("kernel weights underflow for some step; increase the bandwidth")
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    R = np.zeros((res.n, n, n))
    R[:, iu, ju] = vals
    R[:, ju, iu] = vals
    return EstimatedSchedule(R, m, res.names)


def apply_correlation_limit(sched: EstimatedSchedule, rho_max: float) -> EstimatedSchedule:
    """Clip off-diagonals to ``rho_max * sqrt(R_ii R_jj)`` and enforce positive definiteness.

    Diagonals are never modified. When clipping leaves a matrix whose
    smallest eigenvalue is below ``SPD_EPS * trace``, all its off-diagonals
    are shrunk by a common factor, found by bisection, until the smallest
    eigenvalue reaches twice that floor. The smallest eigenvalue is concave
    in the factor, so the admissible factors form an interval containing 0.
    """
    if not 0.0 <= rho_max <= 1.0:
        raise ValueError("rho_max must lie in [0, 1]")
    R = np.array(sched.R, dtype=float)
    d = np.diagonal(R, axis1=1, axis2=2).copy()
    if not (d > 0).all():
        raise ValueError("estimated variances must be positive")
    n = R.shape[1]
    s = np.sqrt(d)
    lim = rho_max * (s[:, :, None] * s[:, None, :])
    R = symmetrize(np.clip(R, -lim, lim))
    eye = np.eye(n, dtype=bool)
    R[:, eye] = d

    tr = d.sum(axis=1)
    lam = np.linalg.eigvalsh(R)[:, 0]
    bad = np.flatnonzero(lam < SPD_EPS * tr)
    if bad.size:
        diag = np.zeros((bad.size, n, n))
        diag[:, eye] = d[bad]
        off = R[bad] - diag
        target = 2.0 * SPD_EPS * tr[bad]
        lo = np.zeros(bad.size)
        hi = np.ones(bad.size)
        for _ in range(_BISECTIONS):
            mid = 0.5 * (lo + hi)
            ok = np.linalg.eigvalsh(diag + mid[:, None, None] * off)[:, 0] >= target
            lo = np.where(ok, mid, lo)
            hi = np.where(ok, hi, mid)
        R[bad] = diag + lo[:, None, None] * off
    return EstimatedSchedule(R, sched.m, sched.names)


def condition_schedule(sched: EstimatedSchedule, rho_max: float, n_steps: int | None = None) -> CovarianceSchedule:
    """Correlation-limited schedule ready for the smoother."""
    out = apply_correlation_limit(sched, rho_max)
    return CovarianceSchedule(out.R, n_steps)


def estimate_schedule(residuals, cfg: KernelConfig = KernelConfig(),
                      names: Sequence[str] = ()) -> EstimatedSchedule:
    res = residuals if isinstance(residuals, ResidualSeries) else ResidualSeries(residuals, tuple(names))
    return estimate_covariance(res, cfg)
