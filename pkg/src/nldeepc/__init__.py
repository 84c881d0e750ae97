"""Kernel-basis data-driven predictive control with sparse selection and SVD reduction."""

__version__ = "0.1.0"
