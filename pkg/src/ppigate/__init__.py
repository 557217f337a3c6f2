"""Sparse-gated Gaussian sequence embeddings for protein interaction prediction."""

__version__ = "0.1.0"

from .tensor import GradTape, Tensor, grad_check

__all__ = ["GradTape", "Tensor", "grad_check", "__version__"]
