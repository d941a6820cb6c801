"""Spectral learning of scale-free hierarchical multi-index targets: simulation and theory."""

__version__ = "0.1.0"
