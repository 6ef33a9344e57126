"""Eigenvalue shifts of the Neumann Laplacian under a small Dirichlet boundary window."""

__version__ = "0.1.0"
