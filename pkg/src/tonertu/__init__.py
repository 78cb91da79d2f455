"""Pseudospectral simulation and verification tools for Toner-Tu flocking models."""

__version__ = "0.1.0"
