"""Simulation laboratory for Euclidean first-passage percolation."""
from __future__ import annotations

__version__ = "0.1.0"
