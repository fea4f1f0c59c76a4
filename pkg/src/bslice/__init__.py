"""Slice models for circle-type actions near the critical hypersurface of a
b-symplectic manifold."""

__version__ = "0.1.0"

__all__ = ["__version__"]
