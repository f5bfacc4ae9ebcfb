"""Simulation and verification laboratory for heavy points of random walks on Z^d."""

__version__ = "0.1.0"
