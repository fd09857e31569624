"""Embed binary tags under the surface of 3D prints and read them back from
simulated thermal recordings and near-infrared scans."""

__version__ = "0.1.0"
