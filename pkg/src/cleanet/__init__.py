"""Contamination-resilient anomaly detection for multivariate time series."""

__version__ = "0.1.0"
