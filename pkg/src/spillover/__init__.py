"""Spillover-effect estimation in clustered randomized experiments."""

__version__ = "0.1.0"
