"""Assisted behavior-tree programming workbench."""

__version__ = "0.1.0"
