"""Building inspection toolkit: benchmark infrastructure for damage recognition."""

__version__ = "0.1.0"
