"""Desk-scale eta-forms, index gerbes and Cech-Deligne cocycles.

The package builds finite-dimensional models of superconnection eta-forms
over small base manifolds, assembles the associated gerbe and Deligne
cocycle data, and numerically verifies the structure identities these
objects satisfy (descent, integrality, curvature compatibility, coboundary
equivalence under changed choices).
"""

__version__ = "0.1.0"
