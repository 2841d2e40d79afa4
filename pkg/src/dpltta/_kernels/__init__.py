"""Convolution kernel backends.

The compiled extension is preferred when it imported cleanly; the numpy
implementation is the fallback and the reference. DPLTTA_KERNEL_BACKEND
(``cython`` or ``numpy``) forces a choice, mainly for benchmarking.
"""

import os
import warnings

from . import conv_numpy

_FORCED = os.environ.get("DPLTTA_KERNEL_BACKEND", "").strip().lower()

_impl = None
if _FORCED not in ("", "numpy"):
    if _FORCED != "cython":
        raise ImportError(
            f"DPLTTA_KERNEL_BACKEND={_FORCED!r}: expected 'cython' or 'numpy'")
if _FORCED != "numpy":
    try:
        from . import _convolve as _impl
    except ImportError:
        if _FORCED == "cython":
            raise
        _impl = None
if _impl is None:
    if _FORCED == "" and not os.environ.get("DPLTTA_QUIET_FALLBACK"):
        warnings.warn("compiled convolution kernels unavailable, "
                      "using numpy fallback", RuntimeWarning)
    _impl = conv_numpy

BACKEND = _impl.BACKEND_NAME
conv2d_forward = _impl.conv2d_forward
conv2d_grad_input = _impl.conv2d_grad_input
conv2d_grad_weight = _impl.conv2d_grad_weight

__all__ = ["BACKEND", "conv2d_forward", "conv2d_grad_input",
           "conv2d_grad_weight", "conv_numpy"]
