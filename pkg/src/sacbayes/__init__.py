"""Confidence scoring rules and a Beta-mixture model of test marks."""

__version__ = "0.1.0"
