import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flightrts.errors import GeometryError, GimbalError
from flightrts.flightmodel import (
    GRAVITY,
    INPUT_NAMES,
    N_KIN,
    N_U,
    N_X,
    N_Y,
    OUTPUT_NAMES,
    SX,
    SY,
    FlightModel,
    RunwayGeometry,
    ThetaParams,
    augment,
    default_noise,
    default_prior_cov,
    load_config,
)
from flightrts.smoother import NoiseModel, smooth
from flightrts.statespace import finite_difference, jacobian_state
from flightrts.timeseries import TimeSeriesTable


def level_input():
    u = np.zeros(N_U)
    u[2] = -GRAVITY
    return u


def test_level_stationary_equilibrium():
    fm = FlightModel()
    d = fm.f_flight(np.zeros(N_KIN), level_input(), ThetaParams())
    assert (d == 0).all()


def test_ebm_triple_shift():
    fm = FlightModel()
    x = np.zeros(N_KIN)
    x[SX["p"]:SX["p"] + 3] = 1.0, 2.0, 3.0
    d = fm.f_flight(x, level_input(), ThetaParams())
    assert d[SX["p"]:SX["p"] + 3].tolist() == [2.0, 3.0, 0.0]


def test_pure_yaw_rate():
    fm = FlightModel()
    x = np.zeros(N_KIN)
    x[SX["r"]] = 0.1
    d = fm.f_flight(x, level_input(), ThetaParams())
    assert d[SX["psi"]] == 0.1
    assert d[SX["phi"]] == 0.0 and d[SX["theta"]] == 0.0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-5, 5))
def test_ebm_triples_are_linear(seed, alpha):
    rng = np.random.default_rng(seed)
    fm = FlightModel()
    for name in ("p", "q", "r", "u_W", "v_W", "w_W"):
        s = SX[name]
        x = np.zeros(N_KIN)
        x[s:s + 3] = rng.normal(size=3)
        xs = np.zeros(N_KIN)
        xs[s:s + 3] = alpha * x[s:s + 3]
        d = fm.f_flight(x, level_input(), ThetaParams())[s:s + 3]
        ds = fm.f_flight(xs, level_input(), ThetaParams())[s:s + 3]
        np.testing.assert_allclose(ds, alpha * d, rtol=1e-14, atol=1e-14)


def test_gimbal_guard():
    fm = FlightModel()
    x = np.zeros(N_KIN)
    x[SX["theta"]] = math.radians(89.5)
    with pytest.raises(GimbalError):
        fm.f_flight(x, level_input(), ThetaParams())
    x[SX["theta"]] = math.radians(88.5)
    fm.f_flight(x, level_input(), ThetaParams())


def test_localizer_examples():
    fm = FlightModel(RunwayGeometry(x_llz=3000.0))
    assert fm.localizer_ddm(0.0, 1.0) == -0.00145
    assert fm.localizer_ddm(0.0, 0.0) == 0.0
    assert fm.localizer_ddm(-3000.0, 2.0) == -0.00145


def test_localizer_examples_through_output_map():
    fm = FlightModel(RunwayGeometry(x_llz=3000.0))
    x = np.zeros(N_KIN)
    x[SX["u_K"]] = 60.0
    for xn, yn, want in ((0.0, 1.0, -0.00145), (0.0, 0.0, 0.0), (-3000.0, 2.0, -0.00145)):
        x[SX["x_N"]], x[SX["y_N"]] = xn, yn
        assert fm.g_flight(x, level_input(), ThetaParams())[SY["delta_LLZ"]] == want


@settings(max_examples=300, deadline=None)
@given(st.floats(-20000, 2999), st.floats(-500, 500))
def test_localizer_is_odd(xn, yn):
    fm = FlightModel(RunwayGeometry(x_llz=3000.0))
    assert fm.localizer_ddm(xn, -yn) == -fm.localizer_ddm(xn, yn)


def test_localizer_geometry_error():
    fm = FlightModel(RunwayGeometry(x_llz=3000.0))
    x = np.zeros(N_KIN)
    x[SX["x_N"]] = 3000.0
    with pytest.raises(GeometryError):
        fm.g_flight(x, level_input(), ThetaParams())
    with pytest.raises(GeometryError):
        fm.localizer_ddm(3500.0, 1.0)
    with pytest.raises(ValueError):
        RunwayGeometry(x_llz=0.0)


def test_localizer_analytic_derivative():
    fm = FlightModel(RunwayGeometry(x_llz=3000.0))
    x = augment(np.zeros(N_KIN), ThetaParams())
    x[SX["u_K"]] = 60.0
    C = fm.dgdx(x, level_input())
    assert abs(C[SY["delta_LLZ"], SX["y_N"]] + 0.00145) <= 1e-12


def random_flight_state(rng):
    x = np.zeros(N_KIN)
    x[0:3] = [rng.uniform(40, 80), rng.normal(0, 2), rng.normal(0, 2)]
    x[3:6] = rng.normal(0, 0.1), rng.normal(0.05, 0.05), rng.uniform(0, 2 * math.pi)
    x[6:9] = rng.uniform(-8000, 1000), rng.normal(0, 30), rng.uniform(5, 400)
    x[9:27] = rng.normal(0, 0.05, size=18)
    x[18], x[21] = rng.normal(-5, 2), rng.normal(3, 2)
    th = ThetaParams(*rng.normal(0, 0.01, size=7), 1.0 + rng.normal(0, 0.01), rng.normal(0, 0.01))
    return augment(x, th)


@pytest.mark.parametrize("seed", range(5))
def test_analytic_jacobians_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    fm = FlightModel()
    x = random_flight_state(rng)
    u = level_input()
    u[:3] += rng.normal(0, 0.5, size=3)
    for analytic, fn in ((fm.dfdx(x, u), lambda v: fm.f(v, u)), (fm.dgdx(x, u), lambda v: fm.g(v, u))):
        fd = finite_difference(fn, x)
        scale = np.maximum(np.abs(fd), 1.0)
        assert np.max(np.abs(analytic - fd) / scale) < 1e-5
    assert (fm.dfdu(x, u)[0:3, 0:3] == np.eye(3)).all()


def test_fd_model_matches_analytic_model():
    fm = FlightModel()
    x = random_flight_state(np.random.default_rng(3))
    fd = jacobian_state(fm.state_space(analytic=False), x, level_input(), which="g")
    an = jacobian_state(fm.state_space(), x, level_input(), which="g")
    np.testing.assert_allclose(an, fd, atol=1e-5 * max(1.0, np.abs(fd).max()))


def test_measured_map_applies_parameters():
    fm = FlightModel()
    x = np.zeros(N_KIN)
    x[SX["u_K"]] = 70.0
    x[SX["z_N"]] = 50.0
    x[SX["q"]] = 0.02
    th = ThetaParams(b_q=0.003, b_hBARO=2.0, s_hBARO=1.1, b_chi=0.01)
    y0 = fm.g_flight(x, level_input(), ThetaParams())
    y = fm.g_flight(x, level_input(), th)
    assert y[SY["q"]] == pytest.approx(0.023, abs=1e-15)
    assert y[SY["h_BARO"]] == pytest.approx(1.1 * y0[SY["h_BARO"]] + 2.0, rel=1e-14)
    assert y[SY["chi_K"]] == pytest.approx((y0[SY["chi_K"]] + 0.01) % (2 * math.pi), abs=1e-14)
    # h_RALT is unaffected by the barometric parameters
    assert y[SY["h_RALT"]] == y0[SY["h_RALT"]] == 50.0


def test_default_noise_shape_and_override():
    nm = default_noise()
    R = nm.R.at(0)
    assert R.shape == (N_Y, N_Y)
    assert (R == np.diag(np.diag(R))).all()
    assert nm.Q.shape == (N_U, N_U)
    cfg = load_config({"output_std": {"V_GND": 2.0}})
    R2 = default_noise(cfg).R.at(0)
    changed = np.flatnonzero(np.diag(R2) != np.diag(R))
    assert changed.tolist() == [OUTPUT_NAMES.index("V_GND")]
    assert R2[0, 0] == 4.0
    assert default_prior_cov().shape == (N_X, N_X)


def test_frozen_jerk_state_without_information():
    fm = FlightModel()
    cfg = load_config({"input_std": {"u_p3": 0.0}})
    nm = default_noise(cfg)
    N = 40
    cols = {n: np.full(N, np.nan) for n in OUTPUT_NAMES}
    cols.update({n: np.zeros(N) for n in INPUT_NAMES[:3]})
    cols["a_z"][:] = -GRAVITY
    tab = TimeSeriesTable.from_arrays(0.125, cols)
    x0 = augment(np.zeros(N_KIN), ThetaParams())
    x0[SX["u_K"]] = 60.0
    x0[SX["z_N"]] = 100.0
    x0[SX["p"] + 2] = 0.01
    P0 = default_prior_cov()
    res = smooth(fm.state_space(), tab, NoiseModel(nm.Q, nm.R), x0, P0)
    assert np.abs(res.x[:, SX["p"] + 2] - 0.01).max() < 1e-9
    assert abs(res.P[-1, SX["p"] + 2, SX["p"] + 2] - P0[SX["p"] + 2, SX["p"] + 2]) < 1e-9


def test_runway_config_round_trip(tmp_path):
    rw = RunwayGeometry(x_llz=3500.0, heading_deg=270.0)
    p = tmp_path / "rw.yaml"
    import yaml
    p.write_text(yaml.safe_dump(rw.to_dict()))
    assert RunwayGeometry.load(p) == rw
    with pytest.raises(ValueError):
        RunwayGeometry.from_dict({"x_llz": 1.0, "bogus": 2})


def test_truth_outputs_round_trip(constant_flight):
    fm = FlightModel(constant_flight.scenario.runway)
    sim = constant_flight
    for k in (0, 100, sim.states.shape[0] - 1):
        assert (fm.g(sim.states[k], sim.inputs[k]) == sim.outputs[k]).all()
