"""Simulation and analysis of cavity-enhanced cold-atom detection."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
