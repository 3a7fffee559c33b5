"""Demonstration amplification and hybrid skill deployment for desk-scale manipulation."""

__version__ = "0.1.0"
