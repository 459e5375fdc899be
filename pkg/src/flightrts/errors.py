"""Exception hierarchy shared by all stages."""


class FlightRTSError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(FlightRTSError):
    pass


class FormatError(FlightRTSError):
    pass


class UnitError(FlightRTSError):
    pass


class WindowError(FlightRTSError):
    pass


class DivergenceError(FlightRTSError):
    """Non-finite state produced during propagation or filtering."""

    def __init__(self, message, step=None, index=None):
        super().__init__(message)
        self.step = step
        self.index = index


class ConditioningError(FlightRTSError):
    """A matrix that must be inverted or factorized is not usable."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class LinearizationError(FlightRTSError):
    pass


class GimbalError(FlightRTSError):
    pass


class GeometryError(FlightRTSError):
    pass


class EstimationError(FlightRTSError):
    pass


class ScenarioError(FlightRTSError):
    pass


class DiagnosticsError(FlightRTSError):
    pass
