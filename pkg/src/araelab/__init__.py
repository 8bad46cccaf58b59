"""Desk-scale adversarially regularized autoencoders for discrete structures."""

__version__ = "0.1.0"
