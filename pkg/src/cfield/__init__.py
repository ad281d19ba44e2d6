"""Sparse-view radiance field toolkit with multi-view and single-view
3D-consistency regularization."""

__version__ = "0.1.0"
