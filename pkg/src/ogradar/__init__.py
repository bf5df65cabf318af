"""Passive FM radar simulation, processing and orbit determination."""

__version__ = "0.1.0"
