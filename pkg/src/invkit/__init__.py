"""Certified invariant-set approximations for SMIB power-system models."""

__version__ = "0.1.0"
