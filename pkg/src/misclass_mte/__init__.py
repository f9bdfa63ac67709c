"""Bounds and estimators for marginal treatment effects under a misclassified
binary treatment."""

__version__ = "0.1.0"
