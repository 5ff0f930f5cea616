"""Optical pump deposition, cavity mode fields and their overlap for optically pumped masers."""

__version__ = "0.1.0"
