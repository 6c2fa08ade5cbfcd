"""Simulation and analysis of 16-dimensional BB84 key distribution with spatial qudits."""

__version__ = "0.1.0"
