"""Desk-scale crowd counting with a four-way selective-scan backbone."""
from .tensor import Tensor, no_grad

__version__ = "0.1.0"
__all__ = ["Tensor", "no_grad", "__version__"]
