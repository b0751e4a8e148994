"""Chance-constrained MPC with control barrier functions among noisy moving obstacles."""

__version__ = "0.1.0"
