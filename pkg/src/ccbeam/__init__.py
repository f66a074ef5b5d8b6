"""Beam tracking on a learned channel chart with a hashed beam map."""

__version__ = "0.1.0"
