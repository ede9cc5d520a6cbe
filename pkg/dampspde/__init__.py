"""
Damped SPDE Laboratory
Spectral Galerkin simulation and verification of structurally damped
plate and wave equations driven by point forces and colored noise
"""

__version__ = "1.0.0"
__author__ = "dampspde developers"
__license__ = "MIT"
