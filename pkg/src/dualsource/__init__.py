"""Dual-source Transformer toolkit for multi-property information extraction."""

__version__ = "0.1.0"
