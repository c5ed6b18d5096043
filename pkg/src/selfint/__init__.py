"""Discretized self-interacting paths: exact Gaussian solves, MCMC and dyadic bounds."""
__version__ = "0.1.0"
