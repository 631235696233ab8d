"""smcflab: a spectral laboratory for the skew mean curvature flow.

The package co-evolves the complex second fundamental form with the
heat-gauge metric/connection system on a periodic grid, monitors the
compatibility identities along the way, and reconstructs the moving
immersion to verify the original geometric flow.
"""

__version__ = "0.1.0"
