"""Simulation and estimation laboratory for random compositions of maps."""

__version__ = "0.1.0"
