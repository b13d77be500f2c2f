"""Stint-time minimizing energy and thermal management for electric race cars."""

__version__ = "0.1.0"
