"""Coarse-to-fine CRF refinement: context CRF with global nodes and a guided-filter guidance CRF."""

__version__ = "0.1.0"
