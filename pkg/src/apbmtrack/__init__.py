"""Constrained APBM state estimation with a cubature Kalman filter."""

__version__ = "0.1.0"
