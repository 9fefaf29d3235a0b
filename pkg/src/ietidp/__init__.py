"""Isogeometric multipatch Poisson solver with dual-primal domain decomposition
and geometric multigrid."""
__version__ = "0.1.0"
