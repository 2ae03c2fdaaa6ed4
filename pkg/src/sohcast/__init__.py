"""Battery state-of-health forecasting from fleet telemetry."""

__version__ = "0.1.0"
