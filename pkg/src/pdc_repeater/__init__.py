"""Simulator of multiplexed repeater chains built from PDC sources and linear-optic BSMs."""

__version__ = "0.1.0"
