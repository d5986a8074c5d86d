"""Calibration of probabilistic object detectors against annotator disagreement."""

__version__ = "0.1.0"
