"""Concatenated continuous dynamical decoupling: simulation and sensing analysis."""
__version__ = "0.1.0"
