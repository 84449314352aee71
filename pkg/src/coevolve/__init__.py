"""Challenger/Solver co-evolution engine."""

__version__ = "0.1.0"
