"""Excess-risk rates for ReLU-network logistic regression on a hard distribution family."""

__version__ = "0.1.0"
