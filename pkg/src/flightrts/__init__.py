"""Flight path reconstruction with an extended Kalman filter and RTS smoother,
adaptive measurement-noise estimation and smoothing-quality diagnostics."""

from .errors import FlightRTSError
from .flightmodel import FlightModel, RunwayGeometry, ThetaParams
from .noise import KernelConfig, ResidualSeries, apply_correlation_limit, estimate_covariance, estimate_mean
from .pipeline import run_pipeline
from .simulate import Scenario, simulate_flight, simulate_lti
from .smoother import CovarianceSchedule, NoiseModel, backward_pass, forward_pass, smooth
from .sqm import SqmReport, select_best, sqm
from .statespace import StateSpaceModel

__version__ = "0.1.0"

__all__ = [
    "CovarianceSchedule",
    "FlightModel",
    "FlightRTSError",
    "KernelConfig",
    "NoiseModel",
    "ResidualSeries",
    "RunwayGeometry",
    "Scenario",
    "SqmReport",
    "StateSpaceModel",
    "ThetaParams",
    "apply_correlation_limit",
    "backward_pass",
    "estimate_covariance",
    "estimate_mean",
    "forward_pass",
    "run_pipeline",
    "select_best",
    "simulate_flight",
    "simulate_lti",
    "smooth",
    "sqm",
]
