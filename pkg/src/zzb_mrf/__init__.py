"""Ziv-Zakai bound based sequence design for MR fingerprinting."""

__version__ = "0.1.0"
