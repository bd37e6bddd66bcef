"""Fog-side digital twins for compromised IoT node detection."""

__version__ = "0.1.0"
