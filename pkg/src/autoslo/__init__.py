"""Scaling-formula autoscaler evolved by genetic programming, with a simulated cluster."""

__version__ = "0.1.0"
