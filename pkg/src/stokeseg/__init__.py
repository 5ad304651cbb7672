"""Enriched Galerkin solvers (EG, mEG, PR-mEG) for the stationary Stokes equations."""

__version__ = "0.1.0"
