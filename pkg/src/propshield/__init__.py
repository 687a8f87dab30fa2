"""propshield: property-inference attacks on shared tabular models and the
arms-race defense that hardens models against them."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
