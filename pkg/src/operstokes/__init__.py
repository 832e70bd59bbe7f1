"""Stokes data of cyclic opers on the sphere.

Exact Lie-algebra certificates (weight bases, deformation kernels) plus a
numerical monodromy/Stokes pipeline with an immersion check for the induced
monodromy map.
"""

__version__ = "0.1.0"
