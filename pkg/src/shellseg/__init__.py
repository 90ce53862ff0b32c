"""Elastic-shell segmentation of 3D volumes from pivot-centered shells."""

__version__ = "0.1.0"
