"""Frequency response of mixed synchronous generator and grid-forming inverter fleets."""

__version__ = "0.1.0"
