"""Iterative conformal calibration of collision-avoiding MPC in multi-agent simulation."""

__version__ = "0.1.0"
