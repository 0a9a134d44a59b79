"""Select the compiled kernels when available.

Set ``ATTNKERN_BACKEND=python`` to force the numpy fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
kernels = _kernels_py

if os.environ.get("ATTNKERN_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as kernels  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        kernels = _kernels_py
