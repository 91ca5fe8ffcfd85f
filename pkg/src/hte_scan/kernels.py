"""Backend selection for the scan hot loops.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``HTE_SCAN_PURE_PYTHON`` is set to a non-empty value
other than ``0``, the numpy implementation is used. Both expose
``optimize_mode`` and ``ascent`` with identical signatures and results.
"""

from __future__ import annotations

import os

from . import _kernels as python_backend

try:
    if os.environ.get("HTE_SCAN_PURE_PYTHON", "0") not in ("", "0"):
        raise ImportError("pure-Python backend requested")
    from . import _ckernels as compiled_backend
except ImportError:
    compiled_backend = None

if compiled_backend is not None:
    _impl = compiled_backend
    BACKEND = "cython"
else:
    _impl = python_backend
    BACKEND = "python"

optimize_mode = _impl.optimize_mode
ascent = _impl.ascent

__all__ = ["BACKEND", "ascent", "optimize_mode", "python_backend", "compiled_backend"]
