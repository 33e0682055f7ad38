"""Spiked p-tensor detection and Ising pure p-spin numerics."""

__version__ = "0.1.0"
