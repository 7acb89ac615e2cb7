"""IMU movie pickup detection: synthetic data, rendering, model, localization and evaluation."""

__version__ = "0.1.0"
