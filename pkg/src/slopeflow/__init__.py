"""Pseudospectral solver and experiment harness for thin-film growth with slope selection."""

from .spectral import Field, TorusGrid, grad_sup_norm, l2_norm, sup_norm

__all__ = ["TorusGrid", "Field", "grad_sup_norm", "l2_norm", "sup_norm"]

__version__ = "0.1.0"
