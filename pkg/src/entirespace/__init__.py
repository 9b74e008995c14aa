"""Entire-space sample construction and multi-domain ranking on a synthetic world."""

__version__ = "0.1.0"
