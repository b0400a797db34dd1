"""Topology learning for radial distribution feeders from nodal voltage statistics."""

__version__ = "0.1.0"
