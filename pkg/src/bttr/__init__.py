"""Bidirectionally trained transformer for image-to-markup recognition."""

__version__ = "0.1.0"
