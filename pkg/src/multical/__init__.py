"""multical - multicalibration error, sample-complexity bounds and calibration sweeps."""

__version__ = "0.1.0"
