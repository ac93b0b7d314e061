"""Thresholds, GEXIT curves and area-theorem bounds for joint iterative
decoding on the two-user binary-input Gaussian multiple-access channel."""

__version__ = "0.1.0"
