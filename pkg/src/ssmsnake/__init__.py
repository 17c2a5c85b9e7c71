"""Contour-evolution segmentation engine with a state-space evolution core."""

__version__ = "0.1.0"
