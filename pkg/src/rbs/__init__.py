"""Modeling, configuration enumeration and SoC-balancing control of reconfigurable battery packs."""

__version__ = "0.1.0"
