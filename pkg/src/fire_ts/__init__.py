"""Frequency-domain forecasting with explicit amplitude/phase drift modeling."""

__version__ = "0.1.0"
