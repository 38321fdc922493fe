"""Backend selection for the hot kernels.

The compiled module ``dvge._kernels`` is used when it was built; otherwise
(or when ``DVGE_PURE_PYTHON`` is set to a non-empty value other than ``0``)
the numpy fallback in ``dvge._kernels_py`` is used. ``BACKEND`` names the
active implementation.
"""
import os

from dvge import _kernels_py

_force_python = os.environ.get("DVGE_PURE_PYTHON", "") not in ("", "0")

if _force_python:
    _impl = _kernels_py
else:
    try:
        from dvge import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"

leaky_relu_forward = _impl.leaky_relu_forward
leaky_relu_backward = _impl.leaky_relu_backward
log_softmax_forward = _impl.log_softmax_forward
log_softmax_backward = _impl.log_softmax_backward
adam_update = _impl.adam_update
perturb_clip = _impl.perturb_clip
confusion_counts = _impl.confusion_counts

__all__ = [
    "BACKEND",
    "leaky_relu_forward",
    "leaky_relu_backward",
    "log_softmax_forward",
    "log_softmax_backward",
    "adam_update",
    "perturb_clip",
    "confusion_counts",
]
