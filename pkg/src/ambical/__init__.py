"""Post-hoc calibration against annotator label distributions."""

__version__ = "0.1.0"
