"""Fractional Sobolev (H^s) regularisation on grids: operators, solvers, geometry."""
__version__ = "0.1.0"
