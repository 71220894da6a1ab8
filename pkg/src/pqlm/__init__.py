"""Portable quantum language model pipeline."""

__version__ = "0.1.0"
