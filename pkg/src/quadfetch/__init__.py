"""Quadruped fetch stack: terrain, reduced-order dynamics, training, missions."""

__version__ = "0.1.0"
