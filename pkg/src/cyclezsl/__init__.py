"""Cycle-consistent feature generation for zero-shot recognition from text."""

__version__ = "0.1.0"
