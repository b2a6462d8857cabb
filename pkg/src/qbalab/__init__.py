"""Simulation lab for quantum full-information Byzantine agreement."""

__version__ = "0.1.0"
