"""Simulation and analysis toolkit for two-qudit light-shift gates on trapped ions."""

__version__ = "0.1.0"
