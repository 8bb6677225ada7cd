"""Transformer surrogate for path-dependent stress response of fiber composites."""
__version__ = "0.1.0"
