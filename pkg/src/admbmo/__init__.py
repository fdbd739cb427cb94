"""Bounded mean oscillation over admissible coverings."""

__version__ = "0.1.0"
