"""Chemotaxis virtual fence: swarm simulator, experiments and signal calibration."""

__version__ = "0.1.0"
