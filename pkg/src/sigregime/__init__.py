"""Regime classification of time series with path signatures, MMD and
multiscale spectral clustering."""

__version__ = "0.1.0"
