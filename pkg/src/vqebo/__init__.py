"""Bayesian optimization of variational quantum eigensolvers on simulated spin chains."""

__version__ = "0.1.0"
