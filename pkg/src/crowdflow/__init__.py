"""Macroscopic pedestrian flow with non-local perception."""

__version__ = "0.1.0"
