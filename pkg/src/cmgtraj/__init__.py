"""Trajectory optimization toolkit for CMG-driven spacecraft attitude maneuvers."""

__version__ = "0.1.0"
