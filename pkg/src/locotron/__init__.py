"""Planar-biped locomotion learning with transformer policies."""

__version__ = "0.1.0"
