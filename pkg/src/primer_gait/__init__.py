"""Reduced-order legged-robot simulator with optimization-free constraint priming."""

__version__ = "0.1.0"
