"""Desk-scale test-time adaptation lab: decoupled prototype losses, feature
statistics transfer, a synthetic domain-shift benchmark, and an online
adaptation engine, all on a small float64 conv net with tape autodiff."""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
