"""Headless AR assembly-instruction engine."""

__version__ = "0.1.0"
