"""Complex-baseband FMCW radar simulator with RF leakage cancellation.

The package models a radar whose TX-to-RX leakage is cancelled before the
LNA by a replica IQ-mixer and a Wilkinson combiner, with a TX IQ-mixer
offset that moves the leakage beat onto an FFT bin for estimation.
"""

from .calibration import CalibrationConfig, CalibrationResult, calibrate, calibrate_multipath
from .scenario import PRESETS, Scenario, load_scenario, parse_scenario
from .simulator import Acquisition, Simulator

__all__ = [
    "Acquisition", "CalibrationConfig", "CalibrationResult", "PRESETS", "Scenario",
    "Simulator", "calibrate", "calibrate_multipath", "load_scenario", "parse_scenario",
]
__version__ = "0.1.0"
