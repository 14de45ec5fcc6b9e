"""Flight-delay feature engineering and weather-grounded risk scoring."""

__version__ = "0.1.0"
