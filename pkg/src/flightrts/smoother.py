"""Extended Kalman filter forward pass and Rauch-Tung-Striebel backward pass.

Conventions
-----------
Step ``k`` runs over the table rows ``0 .. N-1``. ``x0``/``P0`` are the prior
mean and covariance of the state at the first row, so the first prediction is
the prior itself. ``Phi[k]`` maps row ``k`` to row ``k + 1`` and is linearized
at the corrected state of row ``k``; the last entry is unused and left as an
identity matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import ConditioningError, DivergenceError
from .statespace import StateSpaceModel, discretize, jacobian_state, propagate
from .timeseries import TimeSeriesTable, read_csv_columns, write_csv

SPD_EPS = 1e-10


def wrap_angle(a):
    """Map angles to ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


class CovarianceSchedule:
    """A constant measurement-noise matrix or one matrix per time step."""

    def __init__(self, R, n_steps: int | None = None, check: bool = True):
        R = np.asarray(R, dtype=float)
        if R.ndim == 2:
            self._const = True
            self._R = symmetrize(R)
            self._n_steps = n_steps
        elif R.ndim == 3:
            self._const = False
            self._R = symmetrize(R)
            self._n_steps = R.shape[0]
            if n_steps is not None and n_steps != R.shape[0]:
                raise ValueError(f"schedule has {R.shape[0]} steps, expected {n_steps}")
        else:
            raise ValueError("R must be a matrix or a stack of matrices")
        if self._R.shape[-1] != self._R.shape[-2]:
            raise ValueError("covariance matrices must be square")
        self._R.setflags(write=False)
        if check:
            self.validate()

    @classmethod
    def constant(cls, R, n_steps=None):
        return cls(np.asarray(R, dtype=float), n_steps)

    @classmethod
    def diagonal(cls, variances, n_steps=None):
        return cls(np.diag(np.asarray(variances, dtype=float)), n_steps)

    @property
    def is_constant(self) -> bool:
        return self._const

    @property
    def dim(self) -> int:
        return self._R.shape[-1]

    @property
    def n_steps(self) -> int | None:
        return self._n_steps

    def __len__(self):
        if self._n_steps is None:
            raise TypeError("constant schedule without a declared length")
        return self._n_steps

    def at(self, k: int) -> np.ndarray:
        return self._R if self._const else self._R[k]

    def stack(self, n_steps: int | None = None) -> np.ndarray:
        """All matrices as an ``(N, n, n)`` array."""
        if self._const:
            n = n_steps if n_steps is not None else self._n_steps
            if n is None:
                raise ValueError("n_steps required for a constant schedule")
            return np.broadcast_to(self._R, (n,) + self._R.shape)
        return self._R

    def variances(self, n_steps: int | None = None) -> np.ndarray:
        return np.diagonal(self.stack(n_steps), axis1=-2, axis2=-1)

    def validate(self) -> None:
        mats = self._R[None] if self._const else self._R
        if not np.isfinite(mats).all():
            raise ConditioningError("covariance schedule contains non-finite entries")
        eig = np.linalg.eigvalsh(mats)
        tr = np.trace(mats, axis1=-2, axis2=-1)
        bad = np.flatnonzero(eig[:, 0] < SPD_EPS * np.maximum(tr, np.finfo(float).tiny))
        if bad.size:
            raise ConditioningError(f"covariance matrix at step {int(bad[0])} is not positive definite",
                                    step=int(bad[0]))

    def to_csv(self, path, t=None, names: Sequence[str] | None = None) -> None:
        """One row per step with the upper-triangle entries ``R_i_j``."""
        mats = self.stack()
        n = self.dim
        names = list(names) if names is not None else [str(i) for i in range(n)]
        t = np.arange(mats.shape[0], dtype=float) if t is None else t
        iu = np.triu_indices(n)
        cols = {f"R:{names[i]}:{names[j]}": mats[:, i, j] for i, j in zip(*iu)}
        write_csv(path, t, cols)

    @classmethod
    def from_csv(cls, path, names: Sequence[str] | None = None, check: bool = True):
        t, cols, _ = read_csv_columns(path)
        keys = [k.split(":") for k in cols if k.startswith("R:")]
        if names is None:
            names = []
            for _, a, b in keys:
                if a == b:
                    names.append(a)
        idx = {name: i for i, name in enumerate(names)}
        R = np.zeros((t.size, len(names), len(names)))
        for (_, a, b), values in zip(keys, (cols[k] for k in cols if k.startswith("R:"))):
            i, j = idx[a], idx[b]
            R[:, i, j] = values
            R[:, j, i] = values
        return cls(R, check=check)


@dataclass(frozen=True)
class NoiseModel:
    Q: np.ndarray
    R: CovarianceSchedule

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.shape[0] != Q.shape[1]:
            raise ValueError("Q must be square")
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise ValueError("Q must be symmetric")
        if Q.size and np.linalg.eigvalsh(Q)[0] < -1e-12 * max(np.trace(Q), 1.0):
            raise ValueError("Q must be positive semi-definite")
        object.__setattr__(self, "Q", Q)
        if not isinstance(self.R, CovarianceSchedule):
            object.__setattr__(self, "R", CovarianceSchedule(self.R))


@dataclass
class FilterPass:
    x_pred: np.ndarray  # (N, n_x)
    P_pred: np.ndarray  # (N, n_x, n_x)
    x_corr: np.ndarray
    P_corr: np.ndarray
    y_pred: np.ndarray  # (N, n_y)
    innovations: np.ndarray  # (N, n_y), NaN where not measured
    K: np.ndarray  # (N, n_x, n_y), zero columns where not measured
    C: np.ndarray  # (N, n_y, n_x)
    Phi: np.ndarray  # (N, n_x, n_x)
    R: np.ndarray  # (N, n_y, n_y) matrices applied at each step
    mask: np.ndarray  # (N, n_y) True where measured
    u: np.ndarray
    y: np.ndarray
    t0: float
    dt: float

    @property
    def n(self) -> int:
        return self.x_pred.shape[0]

    def innovation_variances(self) -> np.ndarray:
        """Diagonals of ``C P_pred C^T + R`` for every step."""
        CP = np.einsum("kij,kjl->kil", self.C, self.P_pred)
        return np.einsum("kij,kij->ki", CP, self.C) + np.diagonal(self.R, axis1=1, axis2=2)


@dataclass
class SmootherResult:
    x: np.ndarray  # smoothed states (N, n_x)
    P: np.ndarray  # smoothed covariances (N, n_x, n_x)
    y_hat: np.ndarray  # g at smoothed states (N, n_y)
    residuals: np.ndarray  # y_m - y_hat, NaN where not measured
    filter: FilterPass
    state_names: tuple[str, ...]
    output_names: tuple[str, ...]

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def time(self) -> np.ndarray:
        return self.filter.t0 + np.arange(self.n) * self.filter.dt

    def to_csv(self, path) -> None:
        cols = {}
        for i, name in enumerate(self.state_names):
            cols[name] = self.x[:, i]
        for i, name in enumerate(self.output_names):
            cols[f"yhat_{name}"] = self.y_hat[:, i]
        for i, name in enumerate(self.output_names):
            cols[f"res_{name}"] = self.residuals[:, i]
        write_csv(path, self.time, cols)

    def residual_table(self) -> TimeSeriesTable:
        return TimeSeriesTable(self.filter.t0, self.filter.dt,
                               {name: self.residuals[:, i] for i, name in enumerate(self.output_names)})

    def summary(self) -> dict:
        n_meas = self.filter.mask.sum(axis=0)
        return {
            "n_steps": int(self.n),
            "t0": float(self.filter.t0),
            "dt": float(self.filter.dt),
            "outputs": list(self.output_names),
            "measured_counts": {k: int(c) for k, c in zip(self.output_names, n_meas)},
        }

    def write_summary(self, path, **extra) -> None:
        data = self.summary()
        data.update(extra)
        with open(path, "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _floor_spd(S: np.ndarray) -> np.ndarray:
    S = symmetrize(S)
    floor = SPD_EPS * np.trace(S)
    d = np.diagonal(S).copy()
    np.fill_diagonal(S, np.maximum(d, floor))
    return S


def forward_pass(model: StateSpaceModel, table: TimeSeriesTable, noise: NoiseModel,
                 x0, P0, theta=None) -> FilterPass:
    """Run the extended Kalman filter over every row of ``table``.

    Missing outputs are removed from the correction by deleting the matching
    rows of ``C``, ``R`` and ``y``. The covariance update uses the Joseph form.
    """
    theta = model.theta if theta is None else theta
    u = model.inputs_from_table(table)
    y = model.outputs_from_table(table)
    N, nx, ny = table.n, model.n_x, model.n_y
    dt = table.dt
    if noise.R.dim != ny:
        raise ValueError(f"R has dimension {noise.R.dim}, model has {ny} outputs")
    if not noise.R.is_constant and noise.R.n_steps != N:
        raise ValueError(f"R schedule has {noise.R.n_steps} steps, table has {N}")
    Q = noise.Q
    I = np.eye(nx)
    ang = np.array(model.angular_outputs, dtype=int)

    x_pred = np.empty((N, nx))
    P_pred = np.empty((N, nx, nx))
    x_corr = np.empty((N, nx))
    P_corr = np.empty((N, nx, nx))
    y_pred = np.empty((N, ny))
    innov = np.full((N, ny), np.nan)
    K_all = np.zeros((N, nx, ny))
    C_all = np.empty((N, ny, nx))
    Phi = np.empty((N, nx, nx))
    Phi[-1] = I
    R_all = np.empty((N, ny, ny))
    mask = ~np.isnan(y)

    xp = np.asarray(x0, dtype=float).copy()
    Pp = symmetrize(np.asarray(P0, dtype=float))
    for k in range(N):
        if k > 0:
            xc_prev = x_corr[k - 1]
            try:
                F, G = discretize(model, xc_prev, u[k - 1], theta, dt)
                xp = propagate(model, xc_prev, u[k - 1], theta, dt)
            except DivergenceError as exc:
                raise DivergenceError(f"step {k}: {exc}", step=k, index=exc.index) from exc
            Phi[k - 1] = F
            GQ = G @ Q
            Pp = symmetrize(F @ P_corr[k - 1] @ F.T + GQ @ G.T)
        x_pred[k] = xp
        P_pred[k] = Pp

        yp = np.asarray(model.g(xp, u[k], theta), dtype=float)
        C = jacobian_state(model, xp, u[k], theta, "g")
        Rk = noise.R.at(k)
        y_pred[k] = yp
        C_all[k] = C
        R_all[k] = Rk

        m = mask[k]
        if m.any():
            eps = y[k] - yp
            if ang.size:
                eps[ang] = wrap_angle(eps[ang])
            idx = np.flatnonzero(m)
            Cm = C[idx]
            Rm = Rk[np.ix_(idx, idx)]
            PCt = Pp @ Cm.T
            S = _floor_spd(Cm @ PCt + Rm)
            try:
                cf = linalg.cho_factor(S, check_finite=False)
            except linalg.LinAlgError:
                raise ConditioningError(f"innovation covariance not invertible at step {k}", step=k) from None
            Kk = linalg.cho_solve(cf, PCt.T, check_finite=False).T
            innov[k, idx] = eps[idx]
            xc = xp + Kk @ eps[idx]
            IKC = I - Kk @ Cm
            Pc = symmetrize(IKC @ Pp @ IKC.T + Kk @ Rm @ Kk.T)
            K_all[k][:, idx] = Kk
        else:
            xc = xp.copy()
            Pc = Pp.copy()
        if not np.isfinite(xc).all() or not np.isfinite(Pc).all():
            bad = int(np.flatnonzero(~np.isfinite(xc))[0]) if not np.isfinite(xc).all() else None
            raise DivergenceError(f"non-finite corrected state at step {k}", step=k, index=bad)
        x_corr[k] = xc
        P_corr[k] = Pc

    return FilterPass(x_pred, P_pred, x_corr, P_corr, y_pred, innov, K_all, C_all, Phi,
                      R_all, mask, u, y, table.t0, dt)


def backward_pass(fp: FilterPass, model: StateSpaceModel, table: TimeSeriesTable | None = None,
                  theta=None) -> SmootherResult:
    """Rauch-Tung-Striebel recursion over a completed forward pass."""
    theta = model.theta if theta is None else theta
    N = fp.n
    xs = np.empty_like(fp.x_corr)
    Ps = np.empty_like(fp.P_corr)
    xs[-1] = fp.x_corr[-1]
    Ps[-1] = fp.P_corr[-1]
    for k in range(N - 2, -1, -1):
        Pp1 = fp.P_pred[k + 1]
        try:
            cf = linalg.cho_factor(Pp1, check_finite=False)
        except linalg.LinAlgError:
            raise ConditioningError(f"predicted covariance singular at step {k + 1}", step=k + 1) from None
        Gk = linalg.cho_solve(cf, fp.Phi[k] @ fp.P_corr[k], check_finite=False).T
        xs[k] = fp.x_corr[k] + Gk @ (xs[k + 1] - fp.x_pred[k + 1])
        Ps[k] = symmetrize(fp.P_corr[k] + Gk @ (Ps[k + 1] - Pp1) @ Gk.T)
        if not np.isfinite(xs[k]).all():
            raise DivergenceError(f"non-finite smoothed state at step {k}", step=k)

    u = fp.u if table is None else model.inputs_from_table(table)
    y = fp.y if table is None else model.outputs_from_table(table)
    y_hat = np.array([model.g(xs[k], u[k], theta) for k in range(N)], dtype=float).reshape(N, model.n_y)
    res = y - y_hat
    ang = list(model.angular_outputs)
    if ang:
        res[:, ang] = wrap_angle(res[:, ang])
    res[~fp.mask] = np.nan
    return SmootherResult(xs, Ps, y_hat, res, fp, tuple(model.state_names), tuple(model.output_names))


def smooth(model: StateSpaceModel, table: TimeSeriesTable, noise: NoiseModel, x0, P0,
           theta=None) -> SmootherResult:
    fp = forward_pass(model, table, noise, x0, P0, theta)
    return backward_pass(fp, model, table, theta)


__all__ = [
    "CovarianceSchedule",
    "FilterPass",
    "NoiseModel",
    "SmootherResult",
    "backward_pass",
    "forward_pass",
    "smooth",
    "symmetrize",
    "wrap_angle",
]
