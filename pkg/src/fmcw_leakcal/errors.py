"""Exception hierarchy shared by the simulator, the calibrator and the CLI."""


class LeakcalError(Exception):
    """Base class for all package errors."""


class SimulationError(LeakcalError):
    """Raised when a scenario cannot be rendered (CLI exit code 3)."""


class ToneOutOfBand(SimulationError):
    pass


class AliasError(SimulationError):
    pass


class OracleResolutionError(SimulationError):
    pass


class LengthMismatch(SimulationError, ValueError):
    pass


class LengthError(SimulationError, ValueError):
    pass


class ScenarioError(LeakcalError, ValueError):
    """Invalid scenario content (CLI exit code 2)."""


class SchemaError(ScenarioError):
    """Scenario file does not match the strict schema.

    ``line`` is 1-based when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CalibrationError(LeakcalError):
    """Calibration could not complete (CLI exit code 4)."""


class NoLeakageFound(CalibrationError):
    pass


class SweepFailed(CalibrationError):
    pass


class EstimateBelowNoise(CalibrationError):
    pass


class PathsTooClose(CalibrationError):
    pass
