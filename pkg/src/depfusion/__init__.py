"""Dual-stream depression severity estimation from aligned facial frames."""

__version__ = "0.1.0"
