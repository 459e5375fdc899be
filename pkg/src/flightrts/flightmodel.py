"""Kinematic aircraft landing model with Estimation-Before-Modeling blocks.

State (27 + 9): body-frame kinematic velocity, Euler angles, runway-frame
position (x along the centreline, y to the right, z up), third-order
integrator chains for the body rates ``p, q, r`` and the NED wind components,
followed by the bias/scale parameters, which are carried as constant states
so the smoother estimates them.

Inputs (21): measured specific force ``a_x, a_y, a_z`` followed by eighteen
artificial inputs that are identically zero in recorded data.

Outputs (19): ground speed, vertical speed, track, attitude, position,
barometric and radio altitude, localizer and glideslope deviations, measured
rates, airspeed, angle of attack and the horizontal wind components.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, fields
from importlib import resources
from typing import Mapping

import numpy as np
import yaml

from .errors import GeometryError, GimbalError
from .smoother import CovarianceSchedule, NoiseModel
from .statespace import StateSpaceModel
from .timeseries import SignalSpec, TimeSeriesTable

GRAVITY = 9.80665
LLZ_DDM_PER_M = 0.00145
GIMBAL_MARGIN = math.radians(1.0)

KINEMATIC_STATES = (
    "u_K", "v_K", "w_K",
    "phi", "theta", "psi",
    "x_N", "y_N", "z_N",
    "p", "p_dot", "p_ddot",
    "q", "q_dot", "q_ddot",
    "r", "r_dot", "r_ddot",
    "u_W", "u_W_dot", "u_W_ddot",
    "v_W", "v_W_dot", "v_W_ddot",
    "w_W", "w_W_dot", "w_W_ddot",
)
THETA_NAMES = ("b_x", "b_y", "b_z", "b_p", "b_q", "b_r", "b_hBARO", "s_hBARO", "b_chi")
STATE_NAMES = KINEMATIC_STATES + THETA_NAMES
EBM_BLOCKS = ("p", "q", "r", "u", "v", "w")
INPUT_NAMES = ("a_x", "a_y", "a_z") + tuple(f"u_{b}{i}" for b in EBM_BLOCKS for i in (1, 2, 3))
OUTPUT_NAMES = (
    "V_GND", "h_dot", "chi_K",
    "phi", "theta", "psi",
    "x_N", "y_N",
    "h_BARO", "h_RALT",
    "delta_LLZ", "delta_GS",
    "p", "q", "r",
    "V_A", "alpha_A",
    "u_W", "v_W",
)
ANGULAR_OUTPUTS = (2, 3, 5)
OUTPUT_UNITS = dict(zip(OUTPUT_NAMES, (
    "m/s", "m/s", "rad", "rad", "rad", "rad", "m", "m", "m", "m", "DDM", "DDM",
    "rad/s", "rad/s", "rad/s", "m/s", "rad", "m/s", "m/s",
)))
N_KIN = len(KINEMATIC_STATES)
N_X = len(STATE_NAMES)
N_U = len(INPUT_NAMES)
N_Y = len(OUTPUT_NAMES)

SX = {name: i for i, name in enumerate(STATE_NAMES)}
SY = {name: i for i, name in enumerate(OUTPUT_NAMES)}
# first state index of each integrator chain and of its artificial inputs
_EBM_STATE = (9, 12, 15, 18, 21, 24)
_EBM_INPUT = (3, 6, 9, 12, 15, 18)


@dataclass(frozen=True)
class ThetaParams:
    b_x: float = 0.0
    b_y: float = 0.0
    b_z: float = 0.0
    b_p: float = 0.0
    b_q: float = 0.0
    b_r: float = 0.0
    b_hBARO: float = 0.0
    s_hBARO: float = 1.0
    b_chi: float = 0.0

    def __post_init__(self):
        if not self.s_hBARO > 0:
            raise ValueError("s_hBARO must be positive")

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in THETA_NAMES], dtype=float)

    @classmethod
    def from_array(cls, a) -> "ThetaParams":
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class RunwayGeometry:
    x_llz: float = 3300.0
    x_gs: float = 300.0
    y_gs: float = 120.0
    gamma_gs_deg: float = 3.0
    threshold_elevation: float = 100.0
    heading_deg: float = 80.0
    gs_ddm_per_deg: float = 0.0875 / 0.36
    ralt_offset: float = 0.0

    def __post_init__(self):
        if not self.x_llz > 0:
            raise ValueError("x_llz must be positive")

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunwayGeometry":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown runway fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    @classmethod
    def load(cls, path) -> "RunwayGeometry":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def to_dict(self) -> dict:
        return asdict(self)


def rotation_ob(phi: float, theta: float, psi: float) -> np.ndarray:
    """Body-to-NED rotation for Z-Y-X Euler angles."""
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    return np.array([
        [ct * cp, sf * st * cp - cf * sp, cf * st * cp + sf * sp],
        [ct * sp, sf * st * sp + cf * cp, cf * st * sp - sf * cp],
        [-st, sf * ct, cf * ct],
    ])


def _rotation_derivatives(phi, theta, psi):
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    Rz = np.array([[cp, -sp, 0.0], [sp, cp, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[ct, 0.0, st], [0.0, 1.0, 0.0], [-st, 0.0, ct]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cf, -sf], [0.0, sf, cf]])
    dRz = np.array([[-sp, -cp, 0.0], [cp, -sp, 0.0], [0.0, 0.0, 0.0]])
    dRy = np.array([[-st, 0.0, ct], [0.0, 0.0, 0.0], [-ct, 0.0, -st]])
    dRx = np.array([[0.0, 0.0, 0.0], [0.0, -sf, -cf], [0.0, cf, -sf]])
    RzRy = Rz @ Ry
    return (RzRy @ dRx, Rz @ dRy @ Rx, dRz @ Ry @ Rx)


def _skew(a, b, c):
    return np.array([[0.0, -c, b], [c, 0.0, -a], [-b, a, 0.0]])


def _runway_matrix(heading: float) -> np.ndarray:
    """Maps NED vectors to runway-frame (x along, y right, z up) vectors."""
    c, s = math.cos(heading), math.sin(heading)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, -1.0]])


def _check_gimbal(theta: float):
    if abs(theta) > math.pi / 2 - GIMBAL_MARGIN:
        raise GimbalError(f"pitch angle {math.degrees(theta):.2f} deg too close to +-90 deg")


class FlightModel:
    """Landing model bound to one runway; instances are immutable after construction."""

    def __init__(self, runway: RunwayGeometry = RunwayGeometry()):
        self.runway = runway
        self._M = _runway_matrix(math.radians(runway.heading_deg))
        self._M.setflags(write=False)
        B = np.zeros((N_X, N_U))
        B[0:3, 0:3] = np.eye(3)
        for s, i in zip(_EBM_STATE, _EBM_INPUT):
            B[s:s + 3, i:i + 3] = np.eye(3)
        B.setflags(write=False)
        self._B = B
        A0 = np.zeros((N_X, N_X))
        A0[6:9, 6:9] = 0.0
        for s in _EBM_STATE:
            A0[s, s + 1] = 1.0
            A0[s + 1, s + 2] = 1.0
        A0[0:3, 27:30] = -np.eye(3)
        A0.setflags(write=False)
        self._A0 = A0

    # -- raw model on the 27 kinematic states ------------------------------------------

    def f_flight(self, x, u, theta) -> np.ndarray:
        """State derivative of the 27 kinematic states."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        th = theta.to_array() if isinstance(theta, ThetaParams) else np.asarray(theta, dtype=float)
        uk, vk, wk, phi, tht, psi = x[0:6]
        p, q, r = x[9], x[12], x[15]
        _check_gimbal(tht)
        cf, sf = math.cos(phi), math.sin(phi)
        ct, st = math.cos(tht), math.sin(tht)
        ax = u[0] - th[0]
        ay = u[1] - th[1]
        az = u[2] - th[2]
        d = np.empty(N_KIN)
        d[0] = ax - (q * wk - r * vk) - GRAVITY * st
        d[1] = ay - (r * uk - p * wk) + GRAVITY * sf * ct
        d[2] = az - (p * vk - q * uk) + GRAVITY * cf * ct
        qr = q * sf + r * cf
        d[3] = p + st / ct * qr
        d[4] = q * cf - r * sf
        d[5] = qr / ct
        v_o = rotation_ob(phi, tht, psi) @ x[0:3]
        d[6:9] = self._M @ v_o
        for s, i in zip(_EBM_STATE, _EBM_INPUT):
            d[s] = x[s + 1] + u[i]
            d[s + 1] = x[s + 2] + u[i + 1]
            d[s + 2] = u[i + 2]
        return d

    def g_flight(self, x, u, theta) -> np.ndarray:
        """The 19 outputs for kinematic state ``x`` and parameters ``theta``."""
        x = np.asarray(x, dtype=float)
        th = theta.to_array() if isinstance(theta, ThetaParams) else np.asarray(theta, dtype=float)
        rw = self.runway
        phi, tht, psi = x[3], x[4], x[5]
        xn, yn, zn = x[6], x[7], x[8]
        if xn >= rw.x_llz:
            raise GeometryError(f"x_N = {xn:.1f} m is not short of the localizer antenna ({rw.x_llz} m)")
        R = rotation_ob(phi, tht, psi)
        n, e, dd = R @ x[0:3]
        w_o = np.array([x[18], x[21], x[24]])
        va = x[0:3] - R.T @ w_o
        dgs = math.hypot(rw.x_gs - xn, rw.y_gs - yn)
        eps = math.atan2(zn, dgs)
        y = np.empty(N_Y)
        y[0] = math.hypot(n, e)
        y[1] = -dd
        y[2] = (math.atan2(e, n) + th[8]) % (2.0 * math.pi)
        y[3] = phi
        y[4] = tht
        y[5] = psi % (2.0 * math.pi)
        y[6] = xn
        y[7] = yn
        y[8] = th[7] * (zn + rw.threshold_elevation) + th[6]
        y[9] = zn + rw.ralt_offset
        y[10] = -LLZ_DDM_PER_M * rw.x_llz / (rw.x_llz - xn) * yn
        y[11] = -rw.gs_ddm_per_deg * (math.degrees(eps) - rw.gamma_gs_deg)
        y[12] = x[9] + th[3]
        y[13] = x[12] + th[4]
        y[14] = x[15] + th[5]
        y[15] = math.sqrt(va @ va)
        y[16] = math.atan2(va[2], va[0])
        y[17] = x[18]
        y[18] = x[21]
        return y

    def localizer_ddm(self, x_n: float, y_n: float) -> float:
        rw = self.runway
        if x_n >= rw.x_llz:
            raise GeometryError(f"x_N = {x_n:.1f} m is not short of the localizer antenna")
        return -LLZ_DDM_PER_M * rw.x_llz / (rw.x_llz - x_n) * y_n

    # -- augmented model: parameters appended as constant states -----------------------

    def f(self, x, u, _theta=None) -> np.ndarray:
        out = np.zeros(N_X)
        out[:N_KIN] = self.f_flight(x[:N_KIN], u, x[N_KIN:])
        return out

    def g(self, x, u, _theta=None) -> np.ndarray:
        return self.g_flight(x[:N_KIN], u, x[N_KIN:])

    def dfdu(self, x, u, _theta=None) -> np.ndarray:
        return np.array(self._B)

    def dfdx(self, x, u, _theta=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        uk, vk, wk, phi, tht, psi = x[0:6]
        p, q, r = x[9], x[12], x[15]
        _check_gimbal(tht)
        cf, sf = math.cos(phi), math.sin(phi)
        ct, st = math.cos(tht), math.sin(tht)
        tt = st / ct
        G = GRAVITY
        A = np.array(self._A0)
        # translational
        A[0:3, 0:3] = -_skew(p, q, r)
        sv = _skew(uk, vk, wk)
        A[0:3, 9] = sv[:, 0]
        A[0:3, 12] = sv[:, 1]
        A[0:3, 15] = sv[:, 2]
        A[0:3, 3] = (0.0, G * cf * ct, -G * sf * ct)
        A[0:3, 4] = (-G * ct, -G * sf * st, -G * cf * st)
        # Euler kinematics
        qr = q * sf + r * cf
        qr_phi = q * cf - r * sf
        A[3, 3] = tt * qr_phi
        A[3, 4] = qr / (ct * ct)
        A[3, 9] = 1.0
        A[3, 12] = tt * sf
        A[3, 15] = tt * cf
        A[4, 3] = -q * sf - r * cf
        A[4, 12] = cf
        A[4, 15] = -sf
        A[5, 3] = qr_phi / ct
        A[5, 4] = qr * st / (ct * ct)
        A[5, 12] = sf / ct
        A[5, 15] = cf / ct
        # position
        R = rotation_ob(phi, tht, psi)
        dphi, dtht, dpsi = _rotation_derivatives(phi, tht, psi)
        v = x[0:3]
        A[6:9, 0:3] = self._M @ R
        A[6:9, 3] = self._M @ (dphi @ v)
        A[6:9, 4] = self._M @ (dtht @ v)
        A[6:9, 5] = self._M @ (dpsi @ v)
        return A

    def dgdx(self, x, u, _theta=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        rw = self.runway
        phi, tht, psi = x[3], x[4], x[5]
        xn, yn, zn = x[6], x[7], x[8]
        th = x[N_KIN:]
        if xn >= rw.x_llz:
            raise GeometryError(f"x_N = {xn:.1f} m is not short of the localizer antenna")
        R = rotation_ob(phi, tht, psi)
        dR = _rotation_derivatives(phi, tht, psi)
        v = x[0:3]
        vo = R @ v
        # d(v_O)/d(state) for velocity and angles
        dvo = np.zeros((3, N_X))
        dvo[:, 0:3] = R
        for j, D in zip((3, 4, 5), dR):
            dvo[:, j] = D @ v
        n, e, dd = vo
        Vh2 = n * n + e * e
        Vh = math.sqrt(Vh2)
        C = np.zeros((N_Y, N_X))
        C[0] = (n * dvo[0] + e * dvo[1]) / Vh
        C[1] = -dvo[2]
        C[2] = (n * dvo[1] - e * dvo[0]) / Vh2
        C[2, SX["b_chi"]] = 1.0
        C[3, 3] = 1.0
        C[4, 4] = 1.0
        C[5, 5] = 1.0
        C[6, 6] = 1.0
        C[7, 7] = 1.0
        C[8, 8] = th[7]
        C[8, SX["s_hBARO"]] = zn + rw.threshold_elevation
        C[8, SX["b_hBARO"]] = 1.0
        C[9, 8] = 1.0
        denom = rw.x_llz - xn
        C[10, 6] = -LLZ_DDM_PER_M * rw.x_llz * yn / (denom * denom)
        C[10, 7] = -LLZ_DDM_PER_M * rw.x_llz / denom
        dxg, dyg = rw.x_gs - xn, rw.y_gs - yn
        dgs = math.hypot(dxg, dyg)
        rho2 = dgs * dgs + zn * zn
        k = -rw.gs_ddm_per_deg * 180.0 / math.pi
        de_dz = dgs / rho2
        de_dd = -zn / rho2
        C[11, 6] = k * de_dd * (-dxg / dgs)
        C[11, 7] = k * de_dd * (-dyg / dgs)
        C[11, 8] = k * de_dz
        C[12, 9] = 1.0
        C[12, SX["b_p"]] = 1.0
        C[13, 12] = 1.0
        C[13, SX["b_q"]] = 1.0
        C[14, 15] = 1.0
        C[14, SX["b_r"]] = 1.0
        # air-relative velocity v_A = v - R^T w_O
        w_o = np.array([x[18], x[21], x[24]])
        va = v - R.T @ w_o
        dva = np.zeros((3, N_X))
        dva[:, 0:3] = np.eye(3)
        for j, D in zip((3, 4, 5), dR):
            dva[:, j] = -(D.T @ w_o)
        dva[:, 18] = -R.T[:, 0]
        dva[:, 21] = -R.T[:, 1]
        dva[:, 24] = -R.T[:, 2]
        VA = math.sqrt(va @ va)
        C[15] = va @ dva / VA
        ua, wa = va[0], va[2]
        C[16] = (ua * dva[2] - wa * dva[0]) / (ua * ua + wa * wa)
        C[17, 18] = 1.0
        C[18, 21] = 1.0
        return C

    def state_space(self, analytic: bool = True) -> StateSpaceModel:
        return StateSpaceModel(
            n_x=N_X, n_u=N_U, n_y=N_Y,
            f=self.f, g=self.g,
            dfdx=self.dfdx if analytic else None,
            dfdu=self.dfdu if analytic else None,
            dgdx=self.dgdx if analytic else None,
            state_names=STATE_NAMES, input_names=INPUT_NAMES, output_names=OUTPUT_NAMES,
            angular_outputs=ANGULAR_OUTPUTS,
            fixed_inputs={name: 0.0 for name in INPUT_NAMES[3:]},
        )


def augment(x_kin, theta: ThetaParams | np.ndarray) -> np.ndarray:
    th = theta.to_array() if isinstance(theta, ThetaParams) else np.asarray(theta, dtype=float)
    return np.concatenate([np.asarray(x_kin, dtype=float), th])


# -- configuration: noise defaults and priors ----------------------------------------------

def _deep_update(base: dict, over: Mapping) -> dict:
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v
    return base


def load_config(overrides: Mapping | None = None, path=None) -> dict:
    """Shipped noise/prior configuration, optionally merged with a file and overrides."""
    text = resources.files("flightrts").joinpath("data/default_noise.yaml").read_text()
    cfg = yaml.safe_load(text)
    if path is not None:
        with open(path) as fh:
            _deep_update(cfg, yaml.safe_load(fh) or {})
    if overrides:
        _deep_update(cfg, copy.deepcopy(dict(overrides)))
    return cfg


def _vector(section: Mapping, names, what: str) -> np.ndarray:
    missing = [n for n in names if n not in section]
    if missing:
        raise ValueError(f"{what}: no value for {missing}")
    return np.array([float(section[n]) for n in names])


def default_noise(config: Mapping | None = None) -> NoiseModel:
    """Diagonal ``R`` from per-output standard deviations and diagonal ``Q`` for the inputs."""
    cfg = load_config() if config is None else config
    r_std = _vector(cfg["output_std"], OUTPUT_NAMES, "output_std")
    q_std = _vector(cfg["input_std"], INPUT_NAMES, "input_std")
    return NoiseModel(Q=np.diag(q_std ** 2), R=CovarianceSchedule.diagonal(r_std ** 2))


def default_prior_cov(config: Mapping | None = None) -> np.ndarray:
    cfg = load_config() if config is None else config
    return np.diag(_vector(cfg["prior_std"], STATE_NAMES, "prior_std") ** 2)


def _first_valid(table: TimeSeriesTable, name: str, default: float = 0.0) -> float:
    if name not in table:
        return default
    col = table[name]
    idx = np.flatnonzero(~np.isnan(col))
    return float(col[idx[0]]) if idx.size else default


def initial_state(table: TimeSeriesTable, runway: RunwayGeometry = RunwayGeometry(),
                  theta: ThetaParams = ThetaParams()) -> np.ndarray:
    """Prior mean read off the first valid measurements; derivative states start at zero."""
    phi = _first_valid(table, "phi")
    tht = _first_valid(table, "theta")
    psi = _first_valid(table, "psi", math.radians(runway.heading_deg))
    V = _first_valid(table, "V_GND")
    chi = _first_valid(table, "chi_K", psi) - theta.b_chi
    hdot = _first_valid(table, "h_dot")
    v_o = np.array([V * math.cos(chi), V * math.sin(chi), -hdot])
    x = np.zeros(N_KIN)
    x[0:3] = rotation_ob(phi, tht, psi).T @ v_o
    x[3:6] = phi, tht, psi
    x[6] = _first_valid(table, "x_N")
    x[7] = _first_valid(table, "y_N")
    x[8] = _first_valid(table, "h_RALT", runway.ralt_offset) - runway.ralt_offset
    x[9] = _first_valid(table, "p") - theta.b_p
    x[12] = _first_valid(table, "q") - theta.b_q
    x[15] = _first_valid(table, "r") - theta.b_r
    x[18] = _first_valid(table, "u_W")
    x[21] = _first_valid(table, "v_W")
    return augment(x, theta)


def signal_specs(native_rate: float | None = None, recorded: bool = True) -> list[SignalSpec]:
    """Column declarations for a measured landing table: 19 outputs and 3 accelerations."""
    names = [OUTPUT_NAMES[i] for i in ANGULAR_OUTPUTS]
    specs = [SignalSpec(n, OUTPUT_UNITS[n], native_rate, "angular" if n in names else "continuous", recorded)
             for n in OUTPUT_NAMES]
    specs += [SignalSpec(n, "m/s^2", native_rate, "continuous", recorded) for n in INPUT_NAMES[:3]]
    return specs
