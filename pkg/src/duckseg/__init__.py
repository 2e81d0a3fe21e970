"""Losses, distillation, metrics and a synthetic detect/segment pipeline for dense prediction."""
from ._kernels import BACKEND

__version__ = "0.1.0"
