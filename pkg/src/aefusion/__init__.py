"""Bayesian fusion of gridded data products with a constrained, spatially varying autoencoder."""

__version__ = "0.1.0"
