"""Psychometric analysis of annotator disagreement."""

__version__ = "0.1.0"
