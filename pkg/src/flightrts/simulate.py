"""Synthetic landings and linear systems with exactly known noise.

Random streams: ``numpy.random.SeedSequence(seed).spawn(4)`` yields, in order,
the streams for the output noise, then the ``a_x``, ``a_y`` and ``a_z``
accelerometer noise. Each stream feeds a ``numpy.random.Generator`` (PCG64).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping

import numpy as np
import yaml

from .errors import DivergenceError, GimbalError, ScenarioError
from .flightmodel import (
    GRAVITY,
    INPUT_NAMES,
    N_KIN,
    N_U,
    N_X,
    N_Y,
    OUTPUT_NAMES,
    STATE_NAMES,
    FlightModel,
    RunwayGeometry,
    ThetaParams,
    _EBM_INPUT,
    _EBM_STATE,
    _runway_matrix,
    augment,
    load_config,
    rotation_ob,
    signal_specs,
)
from .statespace import propagate
from .timeseries import FT_TO_M, TimeSeriesTable, write_csv

NOISE_PROFILES = ("constant", "step", "smooth")
TAXI_FLOOR = 15.0


@dataclass(frozen=True)
class Scenario:
    duration: float = 150.0
    rate: float = 8.0
    # approach profile
    approach_speed: float = 70.0
    glide_path_deg: float = 3.0
    flare_height: float = 15.0
    rollout_decel: float = 2.0
    taxi_speed: float = 10.0
    taxi_tail: float = 8.0
    lateral_amplitude: float = 5.0
    lateral_period: float = 40.0
    pitch_approach_deg: float = 2.0
    pitch_flare_deg: float = 3.0
    roll_amplitude_deg: float = 2.0
    roll_period: float = 25.0
    yaw_amplitude_deg: float = 0.5
    yaw_period: float = 30.0
    # wind profile in NED, m/s
    wind_north: float = -6.0
    wind_east: float = 3.0
    wind_amplitude: float = 1.5
    wind_period: float = 35.0
    wind_down_amplitude: float = 0.3
    theta_true: ThetaParams = ThetaParams()
    # measurement noise: base standard deviations and time profile
    output_std: Mapping[str, float] | None = None
    noise_profile: str = "constant"
    step_fraction: float = 0.5
    step_ratio: float = 9.0
    smooth_log_amplitude: float = math.log(3.0)
    smooth_period: float = 60.0
    correlation: Mapping[str, float] = field(default_factory=dict)
    accel_std: float = 0.05
    runway: RunwayGeometry = RunwayGeometry()
    seed: int = 0

    def __post_init__(self):
        if self.noise_profile not in NOISE_PROFILES:
            raise ScenarioError(f"unknown noise_profile {self.noise_profile!r}")
        if self.duration * self.rate < 100:
            raise ScenarioError("scenario must span at least 100 steps")
        if not self.rate > 0:
            raise ScenarioError("rate must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration * self.rate))

    @property
    def dt(self) -> float:
        return 1.0 / self.rate

    def base_std(self) -> np.ndarray:
        std = dict(load_config()["output_std"])
        if self.output_std is not None:
            unknown = set(self.output_std) - set(OUTPUT_NAMES)
            if unknown:
                raise ScenarioError(f"unknown outputs in output_std: {sorted(unknown)}")
            std.update(self.output_std)
        return np.array([float(std[n]) for n in OUTPUT_NAMES])

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scenario":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ScenarioError(f"unknown scenario fields: {sorted(unknown)}")
        if "theta_true" in d:
            d["theta_true"] = ThetaParams(**d["theta_true"])
        if "runway" in d:
            d["runway"] = RunwayGeometry.from_dict(d["runway"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ScenarioError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "Scenario":
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ScenarioError(f"cannot parse scenario {path}: {exc}") from None
        if not isinstance(data, Mapping):
            raise ScenarioError(f"scenario {path} is not a mapping")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["output_std"] = None if self.output_std is None else dict(self.output_std)
        d["correlation"] = dict(self.correlation)
        return d


@dataclass
class FlightSimulation:
    truth: TimeSeriesTable
    measured: TimeSeriesTable
    states: np.ndarray  # (N, 36) augmented truth states
    inputs: np.ndarray  # (N, 21) true inputs
    outputs: np.ndarray  # (N, 19) noiseless outputs
    R_true: np.ndarray  # (N, 19, 19)
    Q_accel: np.ndarray  # (3, 3)
    phases: dict
    scenario: Scenario

    def metadata(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "phases": self.phases,
            "n_steps": int(self.states.shape[0]),
            "dt": self.scenario.dt,
            "theta_true": asdict(self.scenario.theta_true),
        }

    def write(self, out_dir) -> dict:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.truth.to_csv(out / "truth.csv")
        self.measured.to_csv(out / "measured.csv")
        std = np.sqrt(np.diagonal(self.R_true, axis1=1, axis2=2))
        write_csv(out / "noise_std.csv", self.truth.time,
                  {f"sigma:{n}": std[:, i] for i, n in enumerate(OUTPUT_NAMES)})
        with open(out / "metadata.json", "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return {"truth": out / "truth.csv", "measured": out / "measured.csv",
                "metadata": out / "metadata.json"}


# -- reference profile -------------------------------------------------------------------

class _Profile:
    """Analytic runway-frame trajectory, body-rate and wind references."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        V = sc.approach_speed
        tg = math.tan(math.radians(sc.glide_path_deg))
        self.sink = V * tg
        self.t_roll = (V - sc.taxi_speed) / sc.rollout_decel
        self.t_td = sc.duration - self.t_roll - sc.taxi_tail
        self.T_f = 2.0 * sc.flare_height / self.sink
        self.t_f = self.t_td - self.T_f
        if self.t_f <= 0:
            raise ScenarioError("duration too short to contain approach, flare and rollout")
        self.x_td = sc.runway.x_gs + sc.flare_height / tg
        self.heading = math.radians(sc.runway.heading_deg)

    def position(self, t):
        """Position, velocity and acceleration in the runway frame."""
        sc = self.sc
        V, d = sc.approach_speed, sc.rollout_decel
        tau = t - self.t_td
        if tau <= 0:
            x, vx, ax = self.x_td + V * tau, V, 0.0
        elif tau <= self.t_roll:
            x, vx, ax = self.x_td + V * tau - 0.5 * d * tau ** 2, V - d * tau, -d
        else:
            x0 = self.x_td + V * self.t_roll - 0.5 * d * self.t_roll ** 2
            x, vx, ax = x0 + sc.taxi_speed * (tau - self.t_roll), sc.taxi_speed, 0.0
        if t <= self.t_f:
            z, vz, az = sc.flare_height + self.sink * (self.t_f - t), -self.sink, 0.0
        elif t <= self.t_td:
            s = t - self.t_f
            a = self.sink / self.T_f
            z, vz, az = sc.flare_height - self.sink * s + 0.5 * a * s * s, -self.sink + a * s, a
        else:
            z, vz, az = 0.0, 0.0, 0.0
        if t < self.t_td:
            A, w = sc.lateral_amplitude, 2.0 * math.pi / sc.lateral_period
            c = math.pi / self.t_td
            e, e1, e2 = 0.5 * (1 + math.cos(c * t)), -0.5 * c * math.sin(c * t), -0.5 * c * c * math.cos(c * t)
            S, Cw = math.sin(w * t), math.cos(w * t)
            y = A * S * e
            vy = A * (w * Cw * e + S * e1)
            ay = A * (-w * w * S * e + 2 * w * Cw * e1 + S * e2)
        else:
            y = vy = ay = 0.0
        return np.array([x, y, z]), np.array([vx, vy, vz]), np.array([ax, ay, az])

    @staticmethod
    def _sine(amp, period, phase, t):
        w = 2.0 * math.pi / period
        a = w * t + phase
        return np.array([amp * math.sin(a), amp * w * math.cos(a),
                         -amp * w * w * math.sin(a), -amp * w ** 3 * math.cos(a)])

    @staticmethod
    def _gauss(area, mu, tau, t):
        s = t - mu
        n = area * math.exp(-0.5 * (s / tau) ** 2) / (tau * math.sqrt(2 * math.pi))
        return np.array([n, -s / tau ** 2 * n, (s * s / tau ** 4 - 1 / tau ** 2) * n,
                         (-s ** 3 / tau ** 6 + 3 * s / tau ** 4) * n])

    def rates(self, t):
        """Reference (value, 1st, 2nd, 3rd derivative) of p, q, r."""
        sc = self.sc
        w_roll = 2.0 * math.pi / sc.roll_period
        p = self._sine(math.radians(sc.roll_amplitude_deg) * w_roll, sc.roll_period, math.pi / 2, t)
        flare = math.radians(sc.pitch_flare_deg)
        q = self._gauss(flare, self.t_f + 0.5 * self.T_f, 0.25 * self.T_f, t)
        q = q - self._gauss(flare + math.radians(sc.pitch_approach_deg), self.t_td + 3.0, 1.5, t)
        w_yaw = 2.0 * math.pi / sc.yaw_period
        r = self._sine(math.radians(sc.yaw_amplitude_deg) * w_yaw, sc.yaw_period, 1.0, t)
        return p, q, r

    def wind(self, t):
        sc = self.sc
        u = self._sine(sc.wind_amplitude, sc.wind_period, 0.0, t)
        u[0] += sc.wind_north
        v = self._sine(sc.wind_amplitude, 1.3 * sc.wind_period, 0.7, t)
        v[0] += sc.wind_east
        w = self._sine(sc.wind_down_amplitude, 0.7 * sc.wind_period, 1.9, t)
        return u, v, w


def _noise_scales(sc: Scenario, N: int) -> np.ndarray:
    """Per-step multiplier of each output's standard deviation, shape ``(N, 19)``."""
    k = np.arange(N)
    if sc.noise_profile == "constant":
        return np.ones((N, N_Y))
    if sc.noise_profile == "step":
        s = np.where(k < int(round(sc.step_fraction * N)), 1.0, math.sqrt(sc.step_ratio))
        return np.repeat(s[:, None], N_Y, axis=1)
    t = k * sc.dt
    phases = 2.0 * math.pi * np.arange(N_Y) / N_Y
    logvar = sc.smooth_log_amplitude * np.sin(2 * math.pi * t[:, None] / sc.smooth_period + phases[None, :])
    return np.exp(0.5 * logvar)


def _correlation_matrix(sc: Scenario) -> np.ndarray:
    C = np.eye(N_Y)
    idx = {n: i for i, n in enumerate(OUTPUT_NAMES)}
    for key, rho in sc.correlation.items():
        a, b = key.split(",")
        i, j = idx[a.strip()], idx[b.strip()]
        C[i, j] = C[j, i] = float(rho)
    if np.linalg.eigvalsh(C)[0] <= 0:
        raise ScenarioError("output noise correlation matrix is not positive definite")
    return C


def _ebm_command(state3, ref4, lam=2.0):
    """Jerk command tracking a reference with triple pole at ``-lam``."""
    return (ref4[3] + 3 * lam * (ref4[2] - state3[2]) + 3 * lam ** 2 * (ref4[1] - state3[1])
            + lam ** 3 * (ref4[0] - state3[0]))


def simulate_flight(sc: Scenario, model: FlightModel | None = None) -> FlightSimulation:
    """Integrate the landing model along the scenario profile and add noise."""
    model = model or FlightModel(sc.runway)
    ss = model.state_space()
    prof = _Profile(sc)
    N, dt = sc.n_steps, sc.dt
    M = _runway_matrix(prof.heading)
    theta = sc.theta_true.to_array()
    g_vec = np.array([0.0, 0.0, GRAVITY])
    wn, zeta = 0.5, 0.9

    pos0, vel0, _ = prof.position(0.0)
    phi0, theta0, psi0 = 0.0, math.radians(sc.pitch_approach_deg), prof.heading
    x = np.zeros(N_KIN)
    x[3:6] = phi0, theta0, psi0
    x[0:3] = rotation_ob(phi0, theta0, psi0).T @ (M.T @ vel0)
    x[6:9] = pos0
    p, q, r = prof.rates(0.0)
    u_w, v_w, w_w = prof.wind(0.0)
    for s, ref in zip(_EBM_STATE, (p, q, r, u_w, v_w, w_w)):
        x[s:s + 3] = ref[:3]
    xa = augment(x, theta)

    states = np.empty((N, N_X))
    inputs = np.zeros((N, N_U))
    for k in range(N):
        t = k * dt
        states[k] = xa
        pos_ref, vel_ref, _ = prof.position(t)
        _, _, acc_mid = prof.position(t + 0.5 * dt)
        R_ob = rotation_ob(*xa[3:6])
        vel = M @ (R_ob @ xa[0:3])
        a_run = acc_mid + wn ** 2 * (pos_ref - xa[6:9]) + 2 * zeta * wn * (vel_ref - vel)
        a_ned = M.T @ a_run
        u = np.zeros(N_U)
        u[0:3] = R_ob.T @ (a_ned - g_vec) + theta[0:3]
        refs = prof.rates(t) + prof.wind(t)
        for s, i, ref in zip(_EBM_STATE, _EBM_INPUT, refs):
            u[i + 2] = _ebm_command(xa[s:s + 3], ref)
        inputs[k] = u
        if k + 1 < N:
            try:
                xa = propagate(ss, xa, u, None, dt)
            except (DivergenceError, GimbalError) as exc:
                raise ScenarioError(f"integration failed at step {k}: {exc}") from exc

    outputs = np.array([ss.g(states[k], inputs[k]) for k in range(N)])

    # measurement noise
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(sc.seed).spawn(4)]
    base = sc.base_std()
    scales = _noise_scales(sc, N)
    corr = _correlation_matrix(sc)
    Lc = np.linalg.cholesky(corr)
    z = streams[0].standard_normal((N, N_Y))
    sig = base[None, :] * scales
    noise = sig * (z @ Lc.T)
    R_true = sig[:, :, None] * corr[None] * sig[:, None, :]
    measured_y = outputs + noise
    ang = [2, 5]
    measured_y[:, ang] = np.mod(measured_y[:, ang], 2 * math.pi)
    acc_noise = np.column_stack([streams[1 + i].standard_normal(N) * sc.accel_std for i in range(3)])
    measured_a = inputs[:, 0:3] + acc_noise

    t_grid = np.arange(N) * dt
    specs = {s.name: s for s in signal_specs(sc.rate, recorded=False)}
    meas_cols = {n: measured_y[:, i] for i, n in enumerate(OUTPUT_NAMES)}
    meas_cols.update({n: measured_a[:, i] for i, n in enumerate(INPUT_NAMES[:3])})
    measured = TimeSeriesTable(0.0, dt, meas_cols, specs)

    truth_cols = {f"true_{n}": states[:, i] for i, n in enumerate(STATE_NAMES)}
    truth_cols.update({f"true_{n}": inputs[:, i] for i, n in enumerate(INPUT_NAMES)})
    truth_cols.update({n: outputs[:, i] for i, n in enumerate(OUTPUT_NAMES)})
    truth = TimeSeriesTable(0.0, dt, truth_cols, {n: specs[n] for n in OUTPUT_NAMES})

    phases = _phases(t_grid, outputs, prof)
    Q_accel = np.eye(3) * sc.accel_std ** 2
    return FlightSimulation(truth, measured, states, inputs, outputs, R_true, Q_accel, phases, sc)


def _phases(t, outputs, prof: _Profile) -> dict:
    ralt = outputs[:, OUTPUT_NAMES.index("h_RALT")]
    vg = outputs[:, OUTPUT_NAMES.index("V_GND")]
    thr = 1000.0 * FT_TO_M
    above = np.flatnonzero(ralt > thr)
    t_1000 = None
    if above.size and above[-1] + 1 < t.size:
        i = above[-1]
        frac = (ralt[i] - thr) / (ralt[i] - ralt[i + 1])
        t_1000 = float(t[i] + frac * (t[i + 1] - t[i]))
    slow = np.flatnonzero((t > prof.t_td) & (vg < TAXI_FLOOR))
    return {
        "t_1000ft": t_1000,
        "t_flare": float(prof.t_f),
        "t_touchdown": float(prof.t_td),
        "t_taxi_floor": float(t[slow[0]]) if slow.size else None,
    }


def simulate_lti(A, C, Q, R, x0, N: int, seed: int = 0):
    """Roll out ``x_{k+1} = A x_k + w_k``, ``y_k = C x_k + v_k``.

    Returns ``(truth, measured)`` arrays of shapes ``(N, n_x)`` and ``(N, n_y)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    x = np.asarray(x0, dtype=float).reshape(-1)
    nx, ny = A.shape[0], C.shape[0]
    if A.shape != (nx, nx) or C.shape[1] != nx or Q.shape != (nx, nx) or R.shape != (ny, ny):
        raise ValueError("inconsistent system dimensions")
    proc, meas = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    W = proc.multivariate_normal(np.zeros(nx), Q, size=N, method="eigh")
    V = meas.multivariate_normal(np.zeros(ny), R, size=N, method="eigh")
    truth = np.empty((N, nx))
    for k in range(N):
        truth[k] = x
        x = A @ x + W[k]
    return truth, truth @ C.T + V


__all__ = ["FlightSimulation", "Scenario", "simulate_flight", "simulate_lti"]
