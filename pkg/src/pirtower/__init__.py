"""Simulation, feature extraction and classification for a passive-infrared sensor tower."""

__version__ = "0.1.0"
