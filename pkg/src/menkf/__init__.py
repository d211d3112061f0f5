"""Multigrid ensemble Kalman filtering for 1D flow twin experiments."""

__version__ = "0.1.0"
