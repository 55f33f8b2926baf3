"""Desk-scale numerics for scattering at the large end of a cone.

Subpackages cover the boundary geodesic-flow engine, Legendrian sample
sets with contact/characteristic certification, partial-wave scattering
(S-matrix, Poisson data, mode resolvents), explicit Euclidean kernels,
cross-module identity checks, and a CLI harness.
"""

__version__ = "0.1.0"
